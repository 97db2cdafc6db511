//! Randomized identity suite over the analysis module.
//!
//! Each check records the largest residual it saw; a check passes when that
//! residual stays below [`IDENTITY_TOL`] (or, for the combinatorial checks,
//! when no case fails).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    decomposition_identity_residual, permutation_dominance_check, symmetric_recursion_residual,
    AnalysisError, Params, MAX_PERMUTATION_USERS,
};
use crate::model::is_one_sided_fair_raw;
use crate::userset::UserSet;

pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub max_residual: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &'static str) -> Self {
        IdentityCheck {
            name,
            cases: 0,
            failures: 0,
            max_residual: 0.0,
            pass: true,
        }
    }

    fn residual(&mut self, r: f64) {
        self.cases += 1;
        if !(r < IDENTITY_TOL) {
            self.failures += 1;
        }
        if r.is_nan() || r > self.max_residual {
            self.max_residual = r;
        }
        self.pass = self.failures == 0;
    }

    fn outcome(&mut self, ok: bool) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
        }
        self.pass = self.failures == 0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub users: usize,
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
    pub max_residual: f64,
    pub pass: bool,
}

impl IdentityReport {
    pub fn check(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Difference scaled by the larger of 1 and the reference magnitude.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Unconstrained configuration: δ in [0, 0.95), p in [0, 0.95), sizes in [0.5, 2).
pub fn random_params(k: usize, rng: &mut impl Rng) -> Params<f64> {
    let delta = (0..k).map(|_| rng.gen_range(0.0..0.95)).collect();
    let p = (0..k).map(|_| rng.gen_range(0.0..0.95)).collect();
    let sizes = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
    Params::new(delta, p, sizes).expect("values drawn inside their ranges")
}

/// Configuration with δ sorted descending and a one-sided fair rate vector,
/// returned as the file sizes of the parameters.
///
/// Rates follow `R_{k+1} = R_k δ_k/δ_{k+1} u` and the cache terms
/// `c_k = (1-p_k)/p_k R_k` follow `c_{k+1} = c_k v`, with `u, v ∈ [0.3, 1]`.
pub fn random_one_sided_fair(k: usize, rng: &mut impl Rng) -> Params<f64> {
    let mut delta: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
    delta.sort_by(|a, b| b.total_cmp(a));
    let mut rates = vec![1.0];
    let mut c = vec![rng.gen_range(0.2..5.0)];
    for i in 1..k {
        let r = rates[i - 1] * delta[i - 1] / delta[i] * rng.gen_range(0.3..=1.0);
        rates.push(r);
        c.push(c[i - 1] * rng.gen_range(0.3..=1.0));
    }
    let top = rates.iter().cloned().fold(0.0, f64::max);
    let p: Vec<f64> = rates.iter().zip(&c).map(|(r, c)| r / (r + c)).collect();
    let sizes: Vec<f64> = rates.iter().map(|r| r / top).collect();
    debug_assert!(is_one_sided_fair_raw(&delta, &p, &sizes).unwrap_or(false));
    Params::new(delta, p, sizes).expect("values drawn inside their ranges")
}

/// Largest scaled gap between the recursion and the alternating sum.
pub fn alternating_residual(params: &Params<f64>) -> Result<f64, AnalysisError> {
    let plan = params.phase_plan()?;
    let mut worst: f64 = 0.0;
    for set in UserSet::all_nonempty(params.users()) {
        for k in set.iter() {
            let alt = params.subphase_length_alternating(set, k)?;
            worst = worst.max(rel(plan.t_user(set, k), alt));
        }
    }
    Ok(worst)
}

/// Largest scaled gap in `Σ_{I: k∈I⊆J} t_I^k = w_{([K]\J)∪{k}} F_k`.
pub fn aggregate_residual(params: &Params<f64>) -> Result<f64, AnalysisError> {
    let plan = params.phase_plan()?;
    let full = params.full();
    let mut worst: f64 = 0.0;
    for set in UserSet::all_nonempty(params.users()) {
        for k in set.iter() {
            let sum: f64 = set
                .without(k)
                .subsets()
                .map(|h| plan.t_user(h.with(k), k))
                .sum();
            let target = params.weight(full.difference(set).with(k))? * params.sizes[k];
            worst = worst.max(rel(sum, target));
        }
    }
    Ok(worst)
}

/// Largest scaled gap in `Σ_{I⊆J} Σ_{H⊆I} (-1)^{|H|} w_{([K]\I)∪H} = w_{[K]\J}`
/// over proper subsets `J`.
pub fn weights_lemma_residual(params: &Params<f64>) -> Result<f64, AnalysisError> {
    let full = params.full();
    let mut worst: f64 = 0.0;
    for set in full.subsets() {
        if set == full {
            continue;
        }
        let mut sum = 0.0;
        for i in set.subsets() {
            let base = full.difference(i);
            for h in i.subsets() {
                let w = params.weight(base.union(h))?;
                sum += if h.len() % 2 == 0 { w } else { -w };
            }
        }
        worst = worst.max(rel(sum, params.weight(full.difference(set))?));
    }
    Ok(worst)
}

/// Number of sets `J` whose worst user is not `min(J)`.
pub fn worst_user_mismatches(params: &Params<f64>) -> Result<usize, AnalysisError> {
    let plan = params.phase_plan()?;
    let mut bad = 0;
    for set in UserSet::all_nonempty(params.users()) {
        if Some(plan.worst_user(set)?) != set.min() {
            bad += 1;
        }
    }
    Ok(bad)
}

/// `|plan total − closed form|`, scaled.
pub fn plan_gap(params: &Params<f64>) -> Result<f64, AnalysisError> {
    let plan = params.phase_plan()?.total;
    let (closed, _) = params.ttot_closed_form()?;
    Ok(rel(plan, closed))
}

pub const CHECK_ALTERNATING: &str = "alternating_sum_vs_recursion";
pub const CHECK_AGGREGATE: &str = "aggregate_subphase_identity";
pub const CHECK_WEIGHTS: &str = "weights_lemma";
pub const CHECK_DECOMPOSITION: &str = "phase1_decomposition";
pub const CHECK_SYM_RECURSION: &str = "symmetric_t_recursion";
pub const CHECK_WORST_USER: &str = "worst_user_is_min";
pub const CHECK_DOMINANCE: &str = "permutation_dominance";
pub const CHECK_PLAN: &str = "plan_matches_closed_form";

/// Runs every check on `samples` random configurations with `k` users, plus
/// the symmetric grids `δ ∈ {0.1,…,0.9}`, `K ∈ {2,…,8}`.
///
/// Unconstrained samples drive the algebraic identities; one-sided fair
/// samples drive the worst-user, dominance and plan checks. Dominance is
/// skipped above [`MAX_PERMUTATION_USERS`].
pub fn identity_suite(
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<IdentityReport, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::EmptySet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alternating = IdentityCheck::new(CHECK_ALTERNATING);
    let mut aggregate = IdentityCheck::new(CHECK_AGGREGATE);
    let mut weights = IdentityCheck::new(CHECK_WEIGHTS);
    let mut decomposition = IdentityCheck::new(CHECK_DECOMPOSITION);
    let mut recursion = IdentityCheck::new(CHECK_SYM_RECURSION);
    let mut worst = IdentityCheck::new(CHECK_WORST_USER);
    let mut dominance = IdentityCheck::new(CHECK_DOMINANCE);
    let mut plan = IdentityCheck::new(CHECK_PLAN);

    for _ in 0..samples {
        let general = random_params(k, &mut rng);
        alternating.residual(alternating_residual(&general)?);
        aggregate.residual(aggregate_residual(&general)?);
        weights.residual(weights_lemma_residual(&general)?);

        let fair = random_one_sided_fair(k, &mut rng);
        worst.outcome(worst_user_mismatches(&fair)? == 0);
        if k <= MAX_PERMUTATION_USERS {
            dominance.outcome(permutation_dominance_check(&fair, &fair.sizes)?);
            plan.residual(plan_gap(&fair)?);
        }
    }
    for users in 2..=8 {
        for step in 1..=9 {
            let delta = step as f64 / 10.0;
            decomposition.residual(decomposition_identity_residual(users, delta, 1.0)?);
            recursion.residual(symmetric_recursion_residual(users, delta, 1.0)?);
        }
    }

    let mut checks = vec![
        alternating,
        aggregate,
        weights,
        decomposition,
        recursion,
        worst,
    ];
    if k <= MAX_PERMUTATION_USERS {
        checks.push(dominance);
        checks.push(plan);
    }
    let max_residual = checks.iter().map(|c| c.max_residual).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.pass);
    Ok(IdentityReport {
        users: k,
        samples,
        seed,
        checks,
        max_residual,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_configs_are_one_sided_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=6 {
            for _ in 0..50 {
                let p = random_one_sided_fair(k, &mut rng);
                assert!(p.delta.windows(2).all(|w| w[0] >= w[1]));
                assert!(is_one_sided_fair_raw(&p.delta, &p.p, &p.sizes).unwrap());
            }
        }
    }

    #[test]
    fn suite_passes_for_small_k() {
        for k in 1..=5 {
            let r = identity_suite(k, 40, 11).unwrap();
            assert!(r.pass, "{r:#?}");
            assert!(r.max_residual < IDENTITY_TOL);
        }
    }

    #[test]
    fn two_user_identities_hold_for_unequal_sizes() {
        let p = Params::<f64>::new(vec![0.5, 0.25], vec![0.5, 0.25], vec![1.0, 1.0]).unwrap();
        assert!(aggregate_residual(&p).unwrap() < 1e-12);
        let bumped = p.with_sizes(vec![1.0, 1.0 + 1e-6]).unwrap();
        assert!(aggregate_residual(&bumped).unwrap() < 1e-12);
        assert!(plan_gap(&bumped).unwrap() < 1e-12);
    }

    #[test]
    fn large_k_skips_permutation_checks() {
        let r = identity_suite(9, 2, 0).unwrap();
        assert!(r.check(CHECK_DOMINANCE).is_none());
        assert!(r.check(CHECK_WORST_USER).unwrap().pass);
    }
}
