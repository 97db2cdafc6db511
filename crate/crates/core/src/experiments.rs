//! Monte Carlo harness, parameter sweeps and cache-size allocation search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analysis::{
    centralized_b_of, ttot_centralized, ttot_no_feedback, AnalysisError, NoFeedbackScheme, Params,
};
use crate::model::{Demand, ModelError, SystemConfig};
use crate::placement::{centralized_place, decentralized_place, PlacementError};
use crate::sim::{run_delivery, SimError, SimOptions, SimResult};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: SimError,
    },
    #[error("{0}")]
    Spec(String),
    #[error("search space has {0} points, above the limit of 10^7")]
    SearchTooLarge(u128),
}

/// Seed of trial `i`, derived from the base seed by SplitMix64 mixing.
pub fn trial_seed(base: u64, i: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlacementKind {
    #[default]
    Decentralized,
    Centralized,
}

#[derive(Debug, Clone)]
pub struct McSpec {
    pub trials: usize,
    pub seed: u64,
    pub placement: PlacementKind,
    pub start_phase: usize,
    pub opts: SimOptions,
}

impl McSpec {
    pub fn new(trials: usize, seed: u64) -> Self {
        McSpec {
            trials,
            seed,
            placement: PlacementKind::Decentralized,
            start_phase: 1,
            opts: SimOptions::counting(),
        }
    }
}

/// Sample statistics of `slots_total / F`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub mean: f64,
    pub stderr: f64,
    /// Half-width of the 95% Student-t interval; `None` for a single trial.
    pub ci95: Option<f64>,
    /// `F`, the average file size used for normalization.
    pub file_size: f64,
    #[serde(skip)]
    pub results: Vec<SimResult>,
}

pub fn summarize(samples: &[f64]) -> (f64, f64, Option<f64>) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, None);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, None);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, stderr, Some(t * stderr))
}

/// Runs seeded trials in parallel; results keep trial order.
pub fn monte_carlo(
    cfg: &SystemConfig,
    demand: &Demand,
    spec: &McSpec,
) -> Result<McSummary, ExperimentError> {
    cfg.validate()?;
    if spec.trials == 0 {
        return Err(ExperimentError::Spec("trials must be at least 1".into()));
    }
    let central = match spec.placement {
        PlacementKind::Centralized => Some(centralized_place(cfg)?),
        PlacementKind::Decentralized => None,
    };
    let results: Vec<Result<SimResult, ExperimentError>> = (0..spec.trials)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(spec.seed, i as u64);
            let local;
            let pm = match &central {
                Some(pm) => pm,
                None => {
                    local = decentralized_place(cfg, seed);
                    &local
                }
            };
            run_delivery(cfg, pm, demand, seed, spec.start_phase, &spec.opts)
                .map_err(|source| ExperimentError::Trial { trial: i, source })
        })
        .collect();
    let results: Vec<SimResult> = results.into_iter().collect::<Result<_, _>>()?;
    let f = cfg.average_file_size();
    let samples: Vec<f64> = results.iter().map(|r| r.slots_total as f64 / f).collect();
    let (mean, stderr, ci95) = summarize(&samples);
    Ok(McSummary {
        mean,
        stderr,
        ci95,
        file_size: f,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Delta,
    Mem,
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delta" => Ok(SweepParam::Delta),
            "mem" => Ok(SweepParam::Mem),
            "K" | "k" => Ok(SweepParam::K),
            other => Err(format!("unknown sweep parameter {other:?} (delta, mem, K)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub varying: SweepParam,
    pub grid: Vec<f64>,
    /// Template; per-user vectors are rebuilt from their first entries.
    pub fixed: SystemConfig,
    /// Trials per grid point, at least 1.
    pub trials: usize,
    pub seed: u64,
    /// Packets per file for the simulated columns.
    pub file_size: u64,
}

/// One grid point. Lengths are in units of `F`; `error` is set when the
/// grid value yields an invalid configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    #[serde(rename = "T_fb")]
    pub t_fb: Option<f64>,
    #[serde(rename = "T_nofb")]
    pub t_nofb: Option<f64>,
    #[serde(rename = "T_cent")]
    pub t_cent: Option<f64>,
    #[serde(rename = "T_sim_mean")]
    pub t_sim_mean: Option<f64>,
    #[serde(rename = "T_sim_ci95")]
    pub t_sim_ci95: Option<f64>,
    pub trials: usize,
    #[serde(rename = "F")]
    pub file_size: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "param",
    "T_fb",
    "T_nofb",
    "T_cent",
    "T_sim_mean",
    "T_sim_ci95",
    "trials",
    "F",
    "seed",
];

fn grid_config(spec: &SweepSpec, value: f64) -> Result<SystemConfig, String> {
    let t = &spec.fixed;
    let mut users = t.users;
    let mut delta = t.delta.first().copied().unwrap_or(0.0);
    let mut mem = t.mem.first().copied().unwrap_or(0.0);
    match spec.varying {
        SweepParam::Delta => delta = value,
        SweepParam::Mem => mem = value,
        SweepParam::K => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(format!("K = {value} is not a positive integer"));
            }
            users = value as usize;
        }
    }
    let cfg = SystemConfig {
        users,
        files: t.files,
        delta: vec![delta; users],
        mem: vec![mem; users],
        file_sizes: vec![spec.file_size; t.files],
        field_order: t.field_order,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn sweep_point(spec: &SweepSpec, index: usize, value: f64) -> SweepRow {
    let mut row = SweepRow {
        param: value,
        t_fb: None,
        t_nofb: None,
        t_cent: None,
        t_sim_mean: None,
        t_sim_ci95: None,
        trials: spec.trials,
        file_size: spec.file_size,
        seed: spec.seed,
        error: None,
    };
    let cfg = match grid_config(spec, value) {
        Ok(c) => c,
        Err(e) => {
            row.error = Some(e);
            return row;
        }
    };
    let demand = Demand::identity(cfg.users);
    let params = Params::from_config(&cfg, &demand).unit_sizes();
    match params.phase_plan() {
        Ok(plan) => row.t_fb = Some(plan.total),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    row.t_nofb = ttot_no_feedback(&params, NoFeedbackScheme::Decentralized).ok();
    row.t_cent = centralized_b_of(cfg.users, cfg.mem[0], cfg.files)
        .and_then(|b| ttot_centralized(cfg.users, cfg.delta[0], b, 1.0))
        .ok();
    let mc = McSpec::new(spec.trials, trial_seed(spec.seed, 1 << 32 | index as u64));
    match monte_carlo(&cfg, &demand, &mc) {
        Ok(s) => {
            row.t_sim_mean = Some(s.mean);
            row.t_sim_ci95 = s.ci95;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// One row per grid value, in grid order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, ExperimentError> {
    if spec.grid.is_empty() {
        return Err(ExperimentError::Spec("sweep grid is empty".into()));
    }
    if spec.trials == 0 {
        return Err(ExperimentError::Spec("trials must be at least 1".into()));
    }
    if spec.file_size == 0 {
        return Err(ExperimentError::Spec("file size must be at least 1".into()));
    }
    Ok(spec
        .grid
        .par_iter()
        .enumerate()
        .map(|(i, &v)| sweep_point(spec, i, v))
        .collect())
}

/// Best cache split found by exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryAllocation {
    pub mem: Vec<f64>,
    /// Scheme length (in units of F) at `mem`.
    pub objective: f64,
    pub budget: f64,
    /// Scheme length of the equal split `budget/K` when it lies on the grid.
    pub symmetric_objective: Option<f64>,
    /// Minimizer of the max-over-permutations closed form.
    pub bound_mem: Vec<f64>,
    pub bound_objective: f64,
    pub points: u64,
}

fn binomial_u128(n: u128, k: u128) -> u128 {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > 1 << 100 {
            return acc;
        }
    }
    acc
}

/// Exhaustive search over `{M_k ∈ step·ℕ, M_k ≤ N, Σ M_k = budget}` for the
/// template's δ and file sizes, with demand `d_k = k`.
pub fn optimize_memory(
    template: &SystemConfig,
    budget: f64,
    step: f64,
) -> Result<MemoryAllocation, ExperimentError> {
    let k = template.users;
    let n = template.files as f64;
    if !(step > 0.0) {
        return Err(ExperimentError::Spec("step must be positive".into()));
    }
    if !(0.0..=k as f64 * n + 1e-9).contains(&budget) {
        return Err(ExperimentError::Spec(format!(
            "budget {budget} outside [0, K·N = {}]",
            k as f64 * n
        )));
    }
    let units_f = budget / step;
    let units = units_f.round();
    if (units_f - units).abs() > 1e-9 {
        return Err(ExperimentError::Spec(format!(
            "step {step} does not divide budget {budget}"
        )));
    }
    let units = units as u64;
    let cap = (n / step + 1e-9).floor() as u64;
    let space = binomial_u128(units as u128 + k as u128 - 1, k as u128 - 1);
    if space > 10_000_000 {
        return Err(ExperimentError::SearchTooLarge(space));
    }
    let demand = Demand::identity(k);
    let base = Params::from_config(&template.with_file_size(1), &demand);
    let evaluate = |alloc: &[u64]| -> Result<(f64, f64), AnalysisError> {
        let p: Vec<f64> = alloc.iter().map(|&u| u as f64 * step / n).collect();
        let params = Params::new(base.delta.clone(), p, base.sizes.clone())?;
        let scheme = params.phase_plan()?.total;
        let bound = params.ttot_closed_form()?.0;
        Ok((scheme, bound))
    };

    let mut alloc = vec![0u64; k];
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut best_bound: Option<(f64, Vec<u64>)> = None;
    let mut symmetric = None;
    let mut points = 0u64;
    let mut stack_err = None;
    compositions(units, cap, &mut alloc, 0, &mut |a| {
        if stack_err.is_some() {
            return;
        }
        let (scheme, bound) = match evaluate(a) {
            Ok(v) => v,
            Err(e) => {
                stack_err = Some(e);
                return;
            }
        };
        points += 1;
        if a.windows(2).all(|w| w[0] == w[1]) {
            symmetric = Some(scheme);
        }
        if best.as_ref().is_none_or(|(b, _)| scheme < *b) {
            best = Some((scheme, a.to_vec()));
        }
        if best_bound.as_ref().is_none_or(|(b, _)| bound < *b) {
            best_bound = Some((bound, a.to_vec()));
        }
    });
    if let Some(e) = stack_err {
        return Err(e.into());
    }
    let to_mem = |a: &[u64]| a.iter().map(|&u| u as f64 * step).collect::<Vec<_>>();
    let (objective, arg) = best.ok_or_else(|| {
        ExperimentError::Spec(format!("no allocation of {budget} fits under M_k ≤ N"))
    })?;
    let (bound_objective, bound_arg) = best_bound.expect("set together with best");
    Ok(MemoryAllocation {
        mem: to_mem(&arg),
        objective,
        budget,
        symmetric_objective: symmetric,
        bound_mem: to_mem(&bound_arg),
        bound_objective,
        points,
    })
}

fn compositions(left: u64, cap: u64, alloc: &mut Vec<u64>, i: usize, f: &mut impl FnMut(&[u64])) {
    let k = alloc.len();
    if i == k - 1 {
        if left <= cap {
            alloc[i] = left;
            f(alloc);
        }
        return;
    }
    let rest_cap = cap * (k - i - 1) as u64;
    let lo = left.saturating_sub(rest_cap);
    for v in lo..=left.min(cap) {
        alloc[i] = v;
        compositions(left - v, cap, alloc, i + 1, f);
    }
}
