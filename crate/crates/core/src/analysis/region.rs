use serde::Serialize;
use serde_json::{json, Value};

use super::{check_perm_users, permutations, AnalysisError, Params, WeightTable};
use crate::scalar::Scalar;
use crate::userset::UserSet;

/// Absolute slack on every inequality's left-hand side.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `Σ_k coeffs[k]·R_{perm[k]} ≤ 1`, with `coeffs[k] = w_{perm[0..=k]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality<T> {
    pub perm: Vec<usize>,
    pub coeffs: Vec<T>,
}

impl<T: Scalar> Inequality<T> {
    pub fn lhs(&self, rates: &[T]) -> T {
        self.perm
            .iter()
            .zip(&self.coeffs)
            .fold(T::zero(), |acc, (&u, c)| acc + c.clone() * rates[u].clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRegion<T> {
    pub users: usize,
    pub inequalities: Vec<Inequality<T>>,
}

impl<T: Scalar> RateRegion<T> {
    pub fn to_json(&self) -> Value {
        let ineqs: Vec<Value> = self
            .inequalities
            .iter()
            .map(|q| {
                json!({
                    "perm": q.perm.iter().map(|u| u + 1).collect::<Vec<_>>(),
                    "coeffs": q.coeffs.iter().map(|c| c.to_f64_lossy()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "K": self.users, "inequalities": ineqs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility<T> {
    pub feasible: bool,
    /// Permutation with the largest left-hand side (first in lexicographic order on ties).
    pub worst_perm: Vec<usize>,
    pub max_lhs: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TtotReport<T> {
    /// Max over permutations of the weighted sum.
    pub closed_form: T,
    pub maximizer: Vec<usize>,
    /// Length of the phase-plan scheme.
    pub scheme: T,
    /// `scheme - closed_form`.
    pub gap: T,
}

/// The two axis vertices and the corner of a two-user region.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserVertices<T> {
    pub r1_axis: (T, T),
    pub r2_axis: (T, T),
    /// `None` when the two permutation constraints are parallel.
    pub intersection: Option<(T, T)>,
}

impl<T: Scalar> TwoUserVertices<T> {
    pub fn sum_rate(&self) -> Option<T> {
        self.intersection.clone().map(|(a, b)| a + b)
    }

    /// `R_2 / R_1` at the corner, i.e. the ratio `F_{d_2}/F_{d_1}` of files it serves.
    pub fn file_size_ratio(&self) -> Option<T> {
        self.intersection.clone().map(|(a, b)| b / a)
    }
}

fn lhs_with_table<T: Scalar>(table: &WeightTable<T>, perm: &[usize], rates: &[T]) -> T {
    let mut prefix = UserSet::EMPTY;
    let mut acc = T::zero();
    for &u in perm {
        prefix = prefix.with(u);
        acc = acc + table.get(prefix).clone() * rates[u].clone();
    }
    acc
}

impl<T: Scalar> Params<T> {
    /// The K! inequalities of the feedback region.
    pub fn region(&self) -> Result<RateRegion<T>, AnalysisError> {
        check_perm_users(self.users())?;
        let table = self.weight_table()?;
        let inequalities = permutations(self.users())
            .map(|perm| {
                let mut prefix = UserSet::EMPTY;
                let coeffs = perm
                    .iter()
                    .map(|&u| {
                        prefix = prefix.with(u);
                        table.get(prefix).clone()
                    })
                    .collect();
                Inequality { perm, coeffs }
            })
            .collect();
        Ok(RateRegion {
            users: self.users(),
            inequalities,
        })
    }

    fn check_rates(&self, rates: &[T]) -> Result<(), AnalysisError> {
        if rates.len() != self.users() {
            return Err(AnalysisError::WrongUserCount {
                expected: self.users(),
                got: rates.len(),
            });
        }
        Ok(())
    }

    /// Largest left-hand side over all permutations and the permutation attaining it.
    pub fn max_lhs(&self, rates: &[T]) -> Result<(T, Vec<usize>), AnalysisError> {
        check_perm_users(self.users())?;
        self.check_rates(rates)?;
        let table = self.weight_table()?;
        let mut best: Option<(T, Vec<usize>)> = None;
        for perm in permutations(self.users()) {
            let v = lhs_with_table(&table, &perm, rates);
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, perm));
            }
        }
        Ok(best.expect("at least one permutation"))
    }

    pub fn feasible(&self, rates: &[T]) -> Result<Feasibility<T>, AnalysisError> {
        let (max_lhs, worst_perm) = self.max_lhs(rates)?;
        Ok(Feasibility {
            feasible: max_lhs.to_f64_lossy() <= 1.0 + FEASIBILITY_TOL,
            worst_perm,
            max_lhs,
        })
    }

    /// `max_π Σ_k w_{π_1…π_k} F_{d_{π_k}}` and its maximizer.
    pub fn ttot_closed_form(&self) -> Result<(T, Vec<usize>), AnalysisError> {
        self.max_lhs(&self.sizes.clone())
    }

    /// Closed form next to the scheme's own length.
    pub fn ttot_report(&self) -> Result<TtotReport<T>, AnalysisError> {
        let (closed_form, maximizer) = self.ttot_closed_form()?;
        let scheme = self.phase_plan()?.total;
        Ok(TtotReport {
            gap: scheme.clone() - closed_form.clone(),
            closed_form,
            maximizer,
            scheme,
        })
    }

    pub fn vertices_two_user(&self) -> Result<TwoUserVertices<T>, AnalysisError> {
        if self.users() != 2 {
            return Err(AnalysisError::WrongUserCount {
                expected: 2,
                got: self.users(),
            });
        }
        let w1 = self.weight(UserSet::singleton(0))?;
        let w2 = self.weight(UserSet::singleton(1))?;
        let w12 = self.weight(UserSet::full(2))?;
        // w1 R1 + w12 R2 = 1 and w12 R1 + w2 R2 = 1
        let det = w1.clone() * w2.clone() - w12.clone() * w12.clone();
        let scale = (w1.clone() * w2.clone()).to_f64_lossy().abs().max(1e-300);
        let intersection = if det.to_f64_lossy().abs() <= 1e-14 * scale {
            None
        } else {
            Some((
                (w2.clone() - w12.clone()) / det.clone(),
                (w1.clone() - w12) / det,
            ))
        };
        Ok(TwoUserVertices {
            r1_axis: (T::one() / w1, T::zero()),
            r2_axis: (T::zero(), T::one() / w2),
            intersection,
        })
    }
}

/// Vertices of the region (including the origin) by intersecting every
/// K-subset of the constraint family `{K! inequalities} ∪ {R_k ≥ 0}`.
pub fn region_vertices(params: &Params<f64>) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let k = params.users();
    if k > 4 {
        return Err(AnalysisError::TooManyUsers { k, max: 4 });
    }
    let region = params.region()?;
    // each row: (coefficients over R, rhs)
    let mut rows: Vec<(Vec<f64>, f64)> = region
        .inequalities
        .iter()
        .map(|q| {
            let mut a = vec![0.0; k];
            for (&u, c) in q.perm.iter().zip(&q.coeffs) {
                a[u] = *c;
            }
            (a, 1.0)
        })
        .collect();
    for u in 0..k {
        let mut a = vec![0.0; k];
        a[u] = 1.0;
        rows.push((a, 0.0));
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut pick = Vec::with_capacity(k);
    choose(rows.len(), k, 0, &mut pick, &mut |idx| {
        let Some(x) = solve_dense(idx.iter().map(|&i| rows[i].clone()).collect()) else {
            return;
        };
        if x.iter().any(|&v| v < -1e-9) {
            return;
        }
        if region
            .inequalities
            .iter()
            .any(|q| q.lhs(&x) > 1.0 + FEASIBILITY_TOL)
        {
            return;
        }
        let x: Vec<f64> = x
            .into_iter()
            .map(|v| if v.abs() < 1e-12 { 0.0 } else { v })
            .collect();
        if !vertices
            .iter()
            .any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9))
        {
            vertices.push(x);
        }
    });
    vertices.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(vertices)
}

fn choose(n: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..n {
        pick.push(i);
        choose(n, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut rows: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let n = rows.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&a, &b| rows[a].0[col].abs().total_cmp(&rows[b].0[col].abs()))?;
        if rows[piv].0[col].abs() < 1e-12 {
            return None;
        }
        rows.swap(col, piv);
        let (head, tail) = rows.split_at_mut(col + 1);
        let pivot = &head[col];
        for row in tail.iter_mut() {
            let f = row.0[col] / pivot.0[col];
            for c in col..n {
                row.0[c] -= f * pivot.0[c];
            }
            row.1 -= f * pivot.1;
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| rows[i].0[c] * x[c]).sum();
        x[i] = (rows[i].1 - s) / rows[i].0[i];
    }
    Some(x)
}

/// Scales `rates` so the identity permutation's inequality is tight, then
/// checks that no other permutation exceeds 1 + 1e-12.
///
/// Users are expected in the order that makes the identity binding
/// (δ non-increasing for a one-sided fair rate vector).
pub fn permutation_dominance_check<T: Scalar>(
    params: &Params<T>,
    rates: &[T],
) -> Result<bool, AnalysisError> {
    check_perm_users(params.users())?;
    params.check_rates(rates)?;
    let table = params.weight_table()?;
    let identity: Vec<usize> = (0..params.users()).collect();
    let base = lhs_with_table(&table, &identity, rates);
    if base == T::zero() {
        return Ok(true);
    }
    let scaled: Vec<T> = rates.iter().map(|r| r.clone() / base.clone()).collect();
    Ok(permutations(params.users())
        .all(|perm| lhs_with_table(&table, &perm, &scaled).to_f64_lossy() <= 1.0 + 1e-12))
}
