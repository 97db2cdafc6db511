//! System configuration, demands, rate vectors and the one-sided fairness predicate.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::userset::MAX_USERS;

fn default_field_order() -> u32 {
    256
}

/// A cache-enabled erasure broadcast channel with `users` receivers and `files` files.
///
/// All per-user vectors are indexed by 0-based user; `file_sizes` by 0-based file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub files: usize,
    /// Erasure probability per user.
    pub delta: Vec<f64>,
    /// Cache size per user, in files.
    pub mem: Vec<f64>,
    /// Packets per file.
    pub file_sizes: Vec<u64>,
    /// Order of the packet alphabet; coefficients are drawn from its nonzero elements.
    #[serde(default = "default_field_order")]
    pub field_order: u32,
}

/// A single failed constraint, named by the offending field (1-based for vectors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("demand: {0}")]
    Demand(String),
    #[error("rate vector has {got} entries, expected {expected}")]
    RateLength { got: usize, expected: usize },
    #[error("fairness undefined: users {zero} and {nonzero} compare a zero cache fraction against a nonzero one")]
    MixedZeroCache { zero: usize, nonzero: usize },
}

impl SystemConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Symmetric network: every user shares `delta` and `mem`, every file has `file_size` packets.
    pub fn symmetric(users: usize, files: usize, delta: f64, mem: f64, file_size: u64) -> Self {
        SystemConfig {
            users,
            files,
            delta: vec![delta; users],
            mem: vec![mem; users],
            file_sizes: vec![file_size; files],
            field_order: default_field_order(),
        }
    }

    /// Lists every violated constraint; empty means valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: String, message: String| out.push(Violation { field, message });

        if self.users == 0 {
            bad("K".into(), "must be at least 1".into());
        }
        if self.users > MAX_USERS {
            bad("K".into(), format!("at most {MAX_USERS} users supported"));
        }
        if self.files < self.users {
            bad("N".into(), format!("must be at least K = {}", self.users));
        }
        if self.delta.len() != self.users {
            bad(
                "delta".into(),
                format!(
                    "has {} entries, expected K = {}",
                    self.delta.len(),
                    self.users
                ),
            );
        }
        if self.mem.len() != self.users {
            bad(
                "mem".into(),
                format!(
                    "has {} entries, expected K = {}",
                    self.mem.len(),
                    self.users
                ),
            );
        }
        if self.file_sizes.len() != self.files {
            bad(
                "file_sizes".into(),
                format!(
                    "has {} entries, expected N = {}",
                    self.file_sizes.len(),
                    self.files
                ),
            );
        }
        for (k, &d) in self.delta.iter().enumerate() {
            if !(d.is_finite() && (0.0..1.0).contains(&d)) {
                bad(format!("delta[{}]", k + 1), format!("{d} not in [0, 1)"));
            }
        }
        for (k, &m) in self.mem.iter().enumerate() {
            if !(m.is_finite() && m >= 0.0 && m <= self.files as f64) {
                bad(
                    format!("mem[{}]", k + 1),
                    format!("{m} not in [0, N = {}]", self.files),
                );
            }
        }
        let q = self.field_order;
        if !(2..=256).contains(&q) || !q.is_power_of_two() {
            bad(
                "field_order".into(),
                format!("{q} is not a power of two in [2, 256]"),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    /// Cache fraction `M_k / N` of every user.
    pub fn cache_fractions(&self) -> Vec<f64> {
        self.mem.iter().map(|m| m / self.files as f64).collect()
    }

    pub fn average_file_size(&self) -> f64 {
        if self.files == 0 {
            return 0.0;
        }
        self.file_sizes.iter().sum::<u64>() as f64 / self.files as f64
    }

    pub fn is_symmetric(&self) -> bool {
        let same = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.delta) && same(&self.mem)
    }

    /// Same configuration with every file resized to `packets`.
    pub fn with_file_size(&self, packets: u64) -> Self {
        SystemConfig {
            file_sizes: vec![packets; self.files],
            ..self.clone()
        }
    }
}

/// Which file each user requests (0-based file indices, all distinct).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand(Vec<usize>);

impl Demand {
    pub fn new(files: Vec<usize>, cfg: &SystemConfig) -> Result<Self, ModelError> {
        if files.len() != cfg.users {
            return Err(ModelError::Demand(format!(
                "{} requests for K = {} users",
                files.len(),
                cfg.users
            )));
        }
        for (k, &f) in files.iter().enumerate() {
            if f >= cfg.files {
                return Err(ModelError::Demand(format!(
                    "user {} requests file {} but N = {}",
                    k + 1,
                    f + 1,
                    cfg.files
                )));
            }
            if files[..k].contains(&f) {
                return Err(ModelError::Demand(format!(
                    "file {} requested twice; demands must be distinct",
                    f + 1
                )));
            }
        }
        Ok(Demand(files))
    }

    /// User `k` requests file `k`.
    pub fn identity(users: usize) -> Self {
        Demand((0..users).collect())
    }

    pub fn file_of(&self, user: usize) -> usize {
        self.0[user]
    }

    pub fn files(&self) -> &[usize] {
        &self.0
    }

    /// Packet counts `F_{d_k}` of the requested files.
    pub fn sizes(&self, cfg: &SystemConfig) -> Vec<f64> {
        self.0.iter().map(|&f| cfg.file_sizes[f] as f64).collect()
    }
}

/// Per-user rates, in packets per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn rates(&self) -> &[f64] {
        &self.0
    }
}

fn at_least(a: f64, b: f64) -> bool {
    a >= b - 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// One-sided fairness of `r` for `cfg`.
///
/// Every ordered pair `(k, j)` with `δ_k ≥ δ_j` must satisfy
/// `(1-p_k)/p_k · R_k ≥ (1-p_j)/p_j · R_j` and `δ_k R_k ≥ δ_j R_j`; ties in δ are
/// checked in both orders. The cache condition is dropped when both fractions are
/// zero and is an error when exactly one is.
pub fn is_one_sided_fair(cfg: &SystemConfig, r: &RateVector) -> Result<bool, ModelError> {
    is_one_sided_fair_raw(&cfg.delta, &cfg.cache_fractions(), r.rates())
}

pub fn is_one_sided_fair_raw(delta: &[f64], p: &[f64], rates: &[f64]) -> Result<bool, ModelError> {
    let k_users = delta.len();
    if rates.len() != k_users {
        return Err(ModelError::RateLength {
            got: rates.len(),
            expected: k_users,
        });
    }
    let mut fair = true;
    for k in 0..k_users {
        for j in 0..k_users {
            if k == j || delta[k] < delta[j] {
                continue;
            }
            match (p[k] == 0.0, p[j] == 0.0) {
                (true, true) => {}
                (true, false) => {
                    return Err(ModelError::MixedZeroCache {
                        zero: k + 1,
                        nonzero: j + 1,
                    })
                }
                (false, true) => {
                    return Err(ModelError::MixedZeroCache {
                        zero: j + 1,
                        nonzero: k + 1,
                    })
                }
                (false, false) => {
                    let lhs = (1.0 - p[k]) / p[k] * rates[k];
                    let rhs = (1.0 - p[j]) / p[j] * rates[j];
                    fair &= at_least(lhs, rhs);
                }
            }
            fair &= at_least(delta[k] * rates[k], delta[j] * rates[j]);
        }
    }
    Ok(fair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_user(delta: [f64; 2], p: [f64; 2]) -> SystemConfig {
        SystemConfig {
            users: 2,
            files: 3,
            delta: delta.to_vec(),
            mem: p.iter().map(|x| x * 3.0).collect(),
            file_sizes: vec![10; 3],
            field_order: 256,
        }
    }

    #[test]
    fn valid_symmetric_config() {
        let cfg = SystemConfig::symmetric(3, 3, 0.25, 1.0, 100);
        assert!(cfg.violations().is_empty());
    }

    #[test]
    fn erasure_one_is_named() {
        let mut cfg = SystemConfig::symmetric(3, 3, 0.25, 1.0, 100);
        cfg.delta[1] = 1.0;
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "delta[2]");
    }

    #[test]
    fn oversized_cache_is_named() {
        let mut cfg = SystemConfig::symmetric(3, 3, 0.25, 1.0, 100);
        cfg.mem[0] = 4.0;
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "mem[1]");
    }

    #[test]
    fn json_rejects_unknown_keys_and_defaults_field_order() {
        let ok = r#"{"K":2,"N":2,"delta":[0.1,0.2],"mem":[0,1],"file_sizes":[5,5]}"#;
        let cfg = SystemConfig::from_json_str(ok).unwrap();
        assert_eq!(cfg.field_order, 256);
        assert_eq!(cfg.users, 2);
        let bad = r#"{"K":2,"N":2,"delta":[0.1,0.2],"mem":[0,1],"file_sizes":[5,5],"extra":1}"#;
        assert!(SystemConfig::from_json_str(bad).is_err());
    }

    #[test]
    fn field_order_must_be_power_of_two() {
        let mut cfg = SystemConfig::symmetric(2, 2, 0.1, 0.0, 4);
        cfg.field_order = 100;
        assert_eq!(cfg.violations()[0].field, "field_order");
    }

    #[test]
    fn demands_must_be_distinct() {
        let cfg = SystemConfig::symmetric(2, 3, 0.1, 0.0, 4);
        assert!(Demand::new(vec![0, 0], &cfg).is_err());
        assert!(Demand::new(vec![0, 3], &cfg).is_err());
        assert!(Demand::new(vec![2, 0], &cfg).is_ok());
    }

    #[test]
    fn fairness_examples() {
        let cfg = two_user([0.5, 0.25], [0.5, 0.5]);
        assert!(is_one_sided_fair(&cfg, &RateVector(vec![1.0, 1.0])).unwrap());

        let cfg = two_user([0.25, 0.5], [1.0 / 3.0, 2.0 / 3.0]);
        assert!(!is_one_sided_fair(&cfg, &RateVector(vec![1.0, 1.0])).unwrap());

        let cfg = two_user([0.5, 0.5], [0.0, 0.0]);
        assert!(is_one_sided_fair(&cfg, &RateVector(vec![3.0, 3.0])).unwrap());
    }

    #[test]
    fn fairness_mixed_zero_cache_is_error() {
        let cfg = two_user([0.5, 0.25], [0.0, 0.5]);
        assert!(matches!(
            is_one_sided_fair(&cfg, &RateVector(vec![1.0, 1.0])),
            Err(ModelError::MixedZeroCache { .. })
        ));
    }

    #[test]
    fn fairness_ties_checked_both_ways() {
        // equal δ, unequal δR: one of the two orders fails
        let cfg = two_user([0.5, 0.5], [0.0, 0.0]);
        assert!(!is_one_sided_fair(&cfg, &RateVector(vec![1.0, 2.0])).unwrap());
    }

    proptest! {
        #[test]
        fn fairness_invariant_under_relabeling(
            d in proptest::collection::vec(0.0f64..0.99, 3),
            p in proptest::collection::vec(0.01f64..0.99, 3),
            r in proptest::collection::vec(0.0f64..5.0, 3),
        ) {
            let base = is_one_sided_fair_raw(&d, &p, &r).unwrap();
            let perm = [2usize, 0, 1];
            let pd: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
            let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let pr: Vec<f64> = perm.iter().map(|&i| r[i]).collect();
            prop_assert_eq!(base, is_one_sided_fair_raw(&pd, &pp, &pr).unwrap());
        }

        #[test]
        fn erasure_products_shrink_on_supersets(d in proptest::collection::vec(0.0f64..1.0, 5), a in 0u32..32, b in 0u32..32) {
            let small = a & b;
            let big = a | b;
            let prod = |m: u32| (0..5).filter(|i| m & (1 << i) != 0).map(|i| d[i]).product::<f64>();
            prop_assert!(prod(small) >= prod(big) - 1e-15);
        }
    }
}
