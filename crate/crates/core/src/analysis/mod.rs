//! Closed-form rates, weights and transmission lengths.
//!
//! Everything here is generic over [`Scalar`] so the same code runs in `f64`
//! for sweeps and in exact rationals for hand-checkable cases.

mod plan;
mod region;
mod symmetric;

pub use plan::{PhasePlan, PlanKind};
pub use region::{
    permutation_dominance_check, region_vertices, Feasibility, Inequality, RateRegion, TtotReport,
    TwoUserVertices,
};
pub use symmetric::{
    centralized_b_of, decomposition_identity_residual, miso_dof_weight, miso_length_per_file,
    order_j_capacity, symmetric_rate, symmetric_recursion_residual, symmetric_t_table,
    symmetric_vertices, ttot_centralized, ttot_no_feedback, ttot_symmetric, MisoScheme,
    NoFeedbackScheme,
};

use thiserror::Error;

use crate::model::{Demand, SystemConfig};
use crate::scalar::Scalar;
use crate::userset::UserSet;

/// Largest K for which the K! permutation family is enumerated.
pub const MAX_PERMUTATION_USERS: usize = 8;
/// Largest K for which per-subset tables (2^K entries) are built.
pub const MAX_TABLE_USERS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("weight of the empty user set is undefined")]
    EmptySet,
    #[error("K = {k} exceeds the limit of {max} for this computation")]
    TooManyUsers { k: usize, max: usize },
    #[error("operation requires a symmetric configuration")]
    NotSymmetric,
    #[error("b = MK/N = {0} is not an integer")]
    NonIntegerB(f64),
    #[error("order {j} outside [1, K = {k}]")]
    BadOrder { j: usize, k: usize },
    #[error("user {user} is not a member of {set}")]
    NotMember { user: usize, set: UserSet },
    #[error("expected {expected} users, got {got}")]
    WrongUserCount { expected: usize, got: usize },
    #[error("vector lengths disagree: {0}")]
    Shape(String),
}

/// Per-user channel, cache and demand-size parameters.
///
/// `sizes[k]` is the requested file size `F_{d_k}` (or a rate, when the
/// formulas are used to rank users by rate).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub delta: Vec<T>,
    pub p: Vec<T>,
    pub sizes: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn new(delta: Vec<T>, p: Vec<T>, sizes: Vec<T>) -> Result<Self, AnalysisError> {
        if p.len() != delta.len() || sizes.len() != delta.len() {
            return Err(AnalysisError::Shape(format!(
                "delta {}, p {}, sizes {}",
                delta.len(),
                p.len(),
                sizes.len()
            )));
        }
        if delta.len() > crate::userset::MAX_USERS {
            return Err(AnalysisError::TooManyUsers {
                k: delta.len(),
                max: crate::userset::MAX_USERS,
            });
        }
        Ok(Params { delta, p, sizes })
    }

    /// Every user shares `delta`, `p` and `size`.
    pub fn symmetric(k: usize, delta: T, p: T, size: T) -> Self {
        Params {
            delta: vec![delta; k],
            p: vec![p; k],
            sizes: vec![size; k],
        }
    }

    pub fn users(&self) -> usize {
        self.delta.len()
    }

    pub fn full(&self) -> UserSet {
        UserSet::full(self.users())
    }

    pub fn with_sizes(&self, sizes: Vec<T>) -> Result<Self, AnalysisError> {
        Params::new(self.delta.clone(), self.p.clone(), sizes)
    }

    /// `Π_{j∈J} δ_j`; 1 for the empty set.
    pub fn delta_prod(&self, set: UserSet) -> T {
        set.iter()
            .fold(T::one(), |acc, j| acc * self.delta[j].clone())
    }

    /// `w_J = Π_{j∈J}(1-p_j) / (1 - Π_{j∈J} δ_j)`.
    pub fn weight(&self, set: UserSet) -> Result<T, AnalysisError> {
        if set.is_empty() {
            return Err(AnalysisError::EmptySet);
        }
        let num = set
            .iter()
            .fold(T::one(), |acc, j| acc * (T::one() - self.p[j].clone()));
        Ok(num / (T::one() - self.delta_prod(set)))
    }

    pub fn weight_table(&self) -> Result<WeightTable<T>, AnalysisError> {
        let k = self.users();
        if k > MAX_TABLE_USERS {
            return Err(AnalysisError::TooManyUsers {
                k,
                max: MAX_TABLE_USERS,
            });
        }
        let mut w = vec![T::zero(); 1 << k];
        for mask in 1..(1u32 << k) {
            w[mask as usize] = self.weight(UserSet::from_bits(mask))?;
        }
        Ok(WeightTable { users: k, w })
    }

    /// Expected size of `L_S(W_{d_k})`: packets of user k's file cached by exactly `S`.
    pub fn subfile_size(&self, cached_by: UserSet, k: usize) -> T {
        (0..self.users()).fold(self.sizes[k].clone(), |acc, j| {
            if cached_by.contains(j) {
                acc * self.p[j].clone()
            } else {
                acc * (T::one() - self.p[j].clone())
            }
        })
    }

    pub fn is_symmetric(&self) -> bool {
        let same = |v: &[T]| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.delta) && same(&self.p)
    }
}

impl Params<f64> {
    /// Parameters of `cfg` serving `demand`.
    pub fn from_config(cfg: &SystemConfig, demand: &Demand) -> Self {
        Params {
            delta: cfg.delta.clone(),
            p: cfg.cache_fractions(),
            sizes: demand.sizes(cfg),
        }
    }

    /// Same parameters with every requested file of unit size.
    pub fn unit_sizes(&self) -> Self {
        Params {
            sizes: vec![1.0; self.users()],
            ..self.clone()
        }
    }
}

/// `w_J` for every nonempty `J ⊆ [K]`, indexed by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable<T> {
    pub users: usize,
    w: Vec<T>,
}

impl<T: Scalar> WeightTable<T> {
    pub fn get(&self, set: UserSet) -> &T {
        assert!(!set.is_empty(), "weight of the empty set");
        &self.w[set.bits() as usize]
    }

    pub fn entries(&self) -> impl Iterator<Item = (UserSet, &T)> {
        UserSet::all_nonempty(self.users)
            .into_iter()
            .map(move |s| (s, &self.w[s.bits() as usize]))
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Permutations {
    Permutations {
        current: Some((0..k).collect()),
    }
}

pub struct Permutations {
    current: Option<Vec<usize>>,
}

impl Iterator for Permutations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let mut next = out.clone();
        let n = next.len();
        if n > 1 {
            if let Some(i) = (0..n - 1).rev().find(|&i| next[i] < next[i + 1]) {
                let j = (i + 1..n).rev().find(|&j| next[j] > next[i]).unwrap();
                next.swap(i, j);
                next[i + 1..].reverse();
                self.current = Some(next);
            }
        }
        Some(out)
    }
}

pub(crate) fn check_perm_users(k: usize) -> Result<(), AnalysisError> {
    if k > MAX_PERMUTATION_USERS {
        Err(AnalysisError::TooManyUsers {
            k,
            max: MAX_PERMUTATION_USERS,
        })
    } else {
        Ok(())
    }
}
