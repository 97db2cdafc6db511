//! Formulas for networks where every user shares δ (and p): order-j
//! capacities, symmetric rates, centralized and no-feedback lengths, and
//! their MISO degrees-of-freedom counterparts.

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Params};
use crate::model::RateVector;
use crate::scalar::{binomial, pow, Scalar};
use crate::userset::UserSet;

fn check_order(k: usize, j: usize) -> Result<(), AnalysisError> {
    if j == 0 || j > k {
        Err(AnalysisError::BadOrder { j, k })
    } else {
        Ok(())
    }
}

/// Sum capacity of order-j messages: `C(K,j) / Σ_{k=1}^{K-j+1} C(K-k, j-1)/(1-δ^k)`.
pub fn order_j_capacity<T: Scalar>(k: usize, delta: T, j: usize) -> Result<T, AnalysisError> {
    check_order(k, j)?;
    let mut denom = T::zero();
    for i in 1..=k - j + 1 {
        denom = denom + binomial::<T>(k - i, j - 1) / (T::one() - pow(&delta, i));
    }
    Ok(binomial::<T>(k, j) / denom)
}

/// `|R^1 - K N_1 / (K N_1/(1-δ^K) + Σ_{i≥2} C(K,i) N_{1→i}/R^i)|` with
/// `N_{1→i} = t_1 δ^{K-i+1} (1-δ)^{i-1}` and `t_1 = N_1/(1-δ^K)`.
pub fn decomposition_identity_residual(
    k: usize,
    delta: f64,
    n1: f64,
) -> Result<f64, AnalysisError> {
    check_order(k, 1)?;
    let r1 = order_j_capacity(k, delta, 1)?;
    let kf = k as f64;
    let t1 = n1 / (1.0 - delta.powi(k as i32));
    let mut denom = kf * t1;
    for i in 2..=k {
        let n_1i = t1 * delta.powi((k - i + 1) as i32) * (1.0 - delta).powi((i - 1) as i32);
        denom += binomial::<f64>(k, i) * n_1i / order_j_capacity(k, delta, i)?;
    }
    Ok((r1 - kf * n1 / denom).abs())
}

/// Per-user sub-phase lengths `t^i_j` (index `j-1`) of the symmetric scheme
/// started at phase `i` with `n_i` packets per i-subset.
pub fn symmetric_t_table<T: Scalar>(
    k: usize,
    delta: T,
    start: usize,
    n_i: T,
) -> Result<Vec<T>, AnalysisError> {
    check_order(k, start)?;
    let one = T::one();
    let mut t = vec![T::zero(); k];
    t[start - 1] = n_i / (one.clone() - pow(&delta, k - start + 1));
    for j in start + 1..=k {
        let erased = pow(&delta, k - j + 1);
        let mut acc = T::zero();
        for l in start..j {
            let moved =
                t[l - 1].clone() * erased.clone() * pow(&(one.clone() - delta.clone()), j - l);
            acc = acc + binomial::<T>(j - 1, l - 1) * moved;
        }
        t[j - 1] = acc / (one.clone() - erased);
    }
    Ok(t)
}

/// `max_j |t^1_j - Σ_{i=2}^{j} t^i_j|` where the scheme started at phase `i`
/// is seeded with the phase-1 leftovers `N_{1→i}`.
pub fn symmetric_recursion_residual(k: usize, delta: f64, n1: f64) -> Result<f64, AnalysisError> {
    let from_one = symmetric_t_table(k, delta, 1, n1)?;
    let t1 = from_one[0];
    let mut parts = vec![0.0; k];
    for i in 2..=k {
        let n_1i = t1 * delta.powi((k - i + 1) as i32) * (1.0 - delta).powi((i - 1) as i32);
        let table = symmetric_t_table(k, delta, i, n_1i)?;
        for (acc, v) in parts.iter_mut().zip(table) {
            *acc += v;
        }
    }
    Ok((1..k)
        .map(|j| (from_one[j] - parts[j]).abs())
        .fold(0.0, f64::max))
}

/// Symmetric per-user rate `1 / Σ_{k=1}^{n} (1-p)^k/(1-δ^k)` for `n` active users.
pub fn symmetric_rate<T: Scalar>(n: usize, delta: T, p: T) -> Result<T, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::EmptySet);
    }
    Ok(T::one() / ttot_symmetric(n, delta, p, T::one()))
}

/// `F Σ_{k=1}^{K} (1-p)^k/(1-δ^k)`.
pub fn ttot_symmetric<T: Scalar>(k: usize, delta: T, p: T, size: T) -> T {
    let keep = T::one() - p;
    let mut acc = T::zero();
    for i in 1..=k {
        acc = acc + pow(&keep, i) / (T::one() - pow(&delta, i));
    }
    acc * size
}

/// Rate `R_sym(|active|)` for the active users, zero for the rest.
pub fn symmetric_vertices(
    k: usize,
    delta: f64,
    p: f64,
    active: UserSet,
) -> Result<RateVector, AnalysisError> {
    let r = symmetric_rate(active.len(), delta, p)?;
    Ok(RateVector(
        (0..k)
            .map(|u| if active.contains(u) { r } else { 0.0 })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoFeedbackScheme {
    Decentralized,
    Centralized,
}

/// Length without state feedback for a symmetric network.
///
/// Decentralized: `F Σ_{k=1}^K (1-p)^k/(1-δ)`; centralized: `F K(1-p)/((1+Kp)(1-δ))`.
pub fn ttot_no_feedback<T: Scalar>(
    params: &Params<T>,
    scheme: NoFeedbackScheme,
) -> Result<T, AnalysisError> {
    if !params.is_symmetric() || params.users() == 0 {
        return Err(AnalysisError::NotSymmetric);
    }
    let k = params.users();
    let keep = T::one() - params.p[0].clone();
    let link = T::one() - params.delta[0].clone();
    let size = params.sizes[0].clone();
    Ok(match scheme {
        NoFeedbackScheme::Decentralized => {
            let mut acc = T::zero();
            for i in 1..=k {
                acc = acc + pow(&keep, i);
            }
            size * acc / link
        }
        NoFeedbackScheme::Centralized => {
            let kk = T::from_count(k as u64);
            let p = params.p[0].clone();
            size * kk.clone() * keep / ((T::one() + kk * p) * link)
        }
    })
}

/// `b = MK/N` when it is an integer.
pub fn centralized_b_of(k: usize, mem: f64, files: usize) -> Result<usize, AnalysisError> {
    let b = mem * k as f64 / files as f64;
    let r = b.round();
    if (b - r).abs() > 1e-9 || r < 0.0 || r > k as f64 {
        return Err(AnalysisError::NonIntegerB(b));
    }
    Ok(r as usize)
}

/// `F Σ_{k=1}^{K-b} [C(K-k,b)/C(K,b)] / (1-δ^k)`.
pub fn ttot_centralized<T: Scalar>(
    k: usize,
    delta: T,
    b: usize,
    size: T,
) -> Result<T, AnalysisError> {
    if b > k {
        return Err(AnalysisError::BadOrder { j: b, k });
    }
    let parts: T = binomial(k, b);
    let mut acc = T::zero();
    for i in 1..=k - b {
        acc = acc + binomial::<T>(k - i, b) / parts.clone() / (T::one() - pow(&delta, i));
    }
    Ok(acc * size)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MisoScheme {
    Decentralized { p: f64 },
    Centralized { b: usize },
}

/// k-th coefficient of the MISO DoF region: the EBC weight with `1-δ^k` replaced by `k`.
pub fn miso_dof_weight(users: usize, k: usize, scheme: MisoScheme) -> Result<f64, AnalysisError> {
    check_order(users, k)?;
    Ok(match scheme {
        MisoScheme::Decentralized { p } => (1.0 - p).powi(k as i32) / k as f64,
        MisoScheme::Centralized { b } => {
            if b > users {
                return Err(AnalysisError::BadOrder { j: b, k: users });
            }
            if k > users - b {
                0.0
            } else {
                binomial::<f64>(users - k, b) / binomial::<f64>(users, b) / k as f64
            }
        }
    })
}

/// Sum of all K DoF coefficients: the MISO delivery length per file.
pub fn miso_length_per_file(users: usize, scheme: MisoScheme) -> Result<f64, AnalysisError> {
    (1..=users).map(|k| miso_dof_weight(users, k, scheme)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    fn half() -> Exact {
        Exact::new(1, 2)
    }

    #[test]
    fn order_j_examples() {
        assert_eq!(order_j_capacity(3, half(), 2).unwrap(), Exact::new(9, 16));
        assert_eq!(order_j_capacity(3, half(), 3).unwrap(), half());
        assert_eq!(order_j_capacity(3, half(), 1).unwrap(), Exact::new(63, 94));
        assert!(order_j_capacity(3, half(), 0).is_err());
    }

    #[test]
    fn order_one_is_k_times_symmetric_rate() {
        let r1 = order_j_capacity(3, half(), 1).unwrap();
        let rs = symmetric_rate(3, half(), Exact::from_integer(0)).unwrap();
        assert_eq!(r1, rs * Exact::from_integer(3));
    }

    #[test]
    fn symmetric_length_and_rate() {
        let t = ttot_symmetric(3, half(), half(), Exact::from_integer(1));
        assert_eq!(t, Exact::new(31, 21));
        assert_eq!(
            symmetric_rate(3, half(), half()).unwrap(),
            Exact::new(21, 31)
        );
        let one = symmetric_rate(1, 0.3f64, 0.4).unwrap();
        assert!((one - 0.7 / 0.6).abs() < 1e-15);
        let v = symmetric_vertices(3, 0.5, 0.5, UserSet::from_users([0, 2])).unwrap();
        assert_eq!(v.0[1], 0.0);
        assert!(symmetric_vertices(3, 0.5, 0.5, UserSet::EMPTY).is_err());
    }

    #[test]
    fn decomposition_small_cases() {
        assert!(decomposition_identity_residual(3, 0.5, 1.0).unwrap() < 1e-12);
        assert!(decomposition_identity_residual(8, 0.9, 10.0).unwrap() < 1e-9);
        assert!(decomposition_identity_residual(2, 0.3, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn recursion_split_small_cases() {
        assert!(symmetric_recursion_residual(3, 0.5, 1.0).unwrap() < 1e-12);
        assert!(symmetric_recursion_residual(6, 0.8, 4.0).unwrap() < 1e-10);
    }

    #[test]
    fn no_feedback_examples() {
        let p = Params::<f64>::symmetric(2, 0.5, 0.5, 1.0);
        assert!(
            (ttot_no_feedback(&p, NoFeedbackScheme::Decentralized).unwrap() - 1.5).abs() < 1e-15
        );
        let p = Params::<f64>::symmetric(4, 0.0, 0.0, 3.0);
        assert_eq!(
            ttot_no_feedback(&p, NoFeedbackScheme::Decentralized).unwrap(),
            12.0
        );
        let asym = Params::<f64>::new(vec![0.1, 0.2], vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert!(ttot_no_feedback(&asym, NoFeedbackScheme::Centralized).is_err());
    }

    #[test]
    fn centralized_examples() {
        assert_eq!(
            ttot_centralized(3, Exact::from_integer(0), 1, Exact::from_integer(1)).unwrap(),
            Exact::from_integer(1)
        );
        assert_eq!(
            ttot_centralized(3, half(), 1, Exact::from_integer(1)).unwrap(),
            Exact::new(16, 9)
        );
        assert_eq!(ttot_centralized(4, 0.3, 4, 1.0).unwrap(), 0.0);
        assert_eq!(centralized_b_of(3, 1.0, 3).unwrap(), 1);
        assert!(centralized_b_of(3, 0.5, 3).is_err());
    }

    #[test]
    fn miso_examples() {
        let w = miso_dof_weight(3, 2, MisoScheme::Decentralized { p: 0.0 }).unwrap();
        assert_eq!(w, 0.5);
        let t = miso_length_per_file(3, MisoScheme::Centralized { b: 1 }).unwrap();
        assert!((t - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            miso_dof_weight(3, 1, MisoScheme::Decentralized { p: 0.0 }).unwrap(),
            1.0
        );
    }
}
