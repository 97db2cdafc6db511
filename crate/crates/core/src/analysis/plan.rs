use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use super::{AnalysisError, Params, MAX_TABLE_USERS};
use crate::model::Demand;
use crate::placement::PlacementMap;
use crate::scalar::Scalar;
use crate::userset::UserSet;

/// Where the initial pool contents of a plan come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanKind {
    /// Expected sub-file sizes under independent caching.
    Decentralized,
    /// `F/C(K,b)` packets cached by each b-subset.
    Centralized { b: usize },
    /// Exact sub-file counts of one placement.
    Realized,
    /// `n` packets per j-subset, needed by every member; no caches.
    OrderJ { order: usize },
}

/// Expected sub-phase lengths of the multi-phase delivery scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan<T> {
    pub users: usize,
    pub kind: PlanKind,
    delta: Vec<T>,
    t_user: Vec<T>,
    t_sub: Vec<T>,
    pub total: T,
}

impl<T: Scalar> PhasePlan<T> {
    /// Runs the sub-phase recursion bottom-up in canonical subset order.
    ///
    /// `initial(J, k)` is the number of packets user `k` needs that start in pool `J`.
    pub fn build(
        delta: &[T],
        kind: PlanKind,
        initial: impl Fn(UserSet, usize) -> T,
    ) -> Result<Self, AnalysisError> {
        let users = delta.len();
        if users > MAX_TABLE_USERS {
            return Err(AnalysisError::TooManyUsers {
                k: users,
                max: MAX_TABLE_USERS,
            });
        }
        let size = 1usize << users;
        let full = UserSet::full(users);
        let mut erased = vec![T::one(); size];
        let mut received = vec![T::one(); size];
        for mask in 1..size {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            erased[mask] = erased[rest].clone() * delta[low].clone();
            received[mask] = received[rest].clone() * (T::one() - delta[low].clone());
        }

        let mut t_user = vec![T::zero(); size * users];
        let mut t_sub = vec![T::zero(); size];
        let mut total = T::zero();
        for set in UserSet::all_nonempty(users) {
            let mut longest = T::zero();
            for k in set.iter() {
                let outside = full.difference(set).with(k);
                let d_out = erased[outside.bits() as usize].clone();
                let others = set.without(k);
                let mut acc = initial(set, k);
                for sub in others.subsets() {
                    if sub == others {
                        continue;
                    }
                    let from = sub.with(k);
                    let t_from = &t_user[from.bits() as usize * users + k];
                    if *t_from == T::zero() {
                        continue;
                    }
                    let gained = set.difference(from);
                    acc = acc
                        + t_from.clone() * d_out.clone() * received[gained.bits() as usize].clone();
                }
                let t = acc / (T::one() - d_out);
                longest = longest.max_of(t.clone());
                t_user[set.bits() as usize * users + k] = t;
            }
            total = total + longest.clone();
            t_sub[set.bits() as usize] = longest;
        }
        Ok(PhasePlan {
            users,
            kind,
            delta: delta.to_vec(),
            t_user,
            t_sub,
            total,
        })
    }

    /// Plan for `n` order-j packets per j-subset (sub-phases below order j are empty).
    pub fn order_j(delta: &[T], order: usize, n: T) -> Result<Self, AnalysisError> {
        let k = delta.len();
        if order == 0 || order > k {
            return Err(AnalysisError::BadOrder { j: order, k });
        }
        PhasePlan::build(delta, PlanKind::OrderJ { order }, |set, _| {
            if set.len() == order {
                n.clone()
            } else {
                T::zero()
            }
        })
    }

    /// `t_J^k`; zero when `k ∉ J`.
    pub fn t_user(&self, set: UserSet, k: usize) -> T {
        if !set.contains(k) {
            return T::zero();
        }
        self.t_user[set.bits() as usize * self.users + k].clone()
    }

    /// `t_J = max_{k∈J} t_J^k`.
    pub fn t_sub(&self, set: UserSet) -> T {
        self.t_sub[set.bits() as usize].clone()
    }

    /// `N_{I→J}^k`: packets for `k` sent in sub-phase `I`, erased at `k` and
    /// outside `J`, received by all of `J \ I`.
    pub fn transfer(&self, from: UserSet, to: UserSet, k: usize) -> T {
        if !from.contains(k) || !from.is_subset(to) || from == to {
            return T::zero();
        }
        let outside = UserSet::full(self.users).difference(to).with(k);
        let erased = outside
            .iter()
            .fold(T::one(), |acc, j| acc * self.delta[j].clone());
        let received = to
            .difference(from)
            .iter()
            .fold(T::one(), |acc, j| acc * (T::one() - self.delta[j].clone()));
        self.t_user(from, k) * erased * received
    }

    /// Sub-phases in execution order with their lengths.
    pub fn subphases(&self) -> Vec<(UserSet, T)> {
        UserSet::all_nonempty(self.users)
            .into_iter()
            .map(|s| (s, self.t_sub(s)))
            .collect()
    }

    /// User attaining `t_J`; near-ties (1e-12 relative) go to the smallest index.
    pub fn worst_user(&self, set: UserSet) -> Result<usize, AnalysisError> {
        if set.is_empty() {
            return Err(AnalysisError::EmptySet);
        }
        let best = self.t_sub(set).to_f64_lossy();
        let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
        Ok(set
            .iter()
            .find(|&k| self.t_user(set, k).to_f64_lossy() >= best - tol)
            .expect("max is attained"))
    }

    pub fn to_json(&self) -> Value {
        let subphases: Vec<Value> = self
            .subphases()
            .into_iter()
            .map(|(s, t)| {
                let per_user: BTreeMap<String, f64> = s
                    .iter()
                    .map(|k| ((k + 1).to_string(), self.t_user(s, k).to_f64_lossy()))
                    .collect();
                json!({ "subphase": s, "t": t.to_f64_lossy(), "t_user": per_user })
            })
            .collect();
        json!({
            "plan": self.kind,
            "K": self.users,
            "total": self.total.to_f64_lossy(),
            "subphases": subphases,
        })
    }
}

impl<T: Scalar> Params<T> {
    /// Decentralized plan from expected sub-file sizes.
    pub fn phase_plan(&self) -> Result<PhasePlan<T>, AnalysisError> {
        PhasePlan::build(&self.delta, PlanKind::Decentralized, |set, k| {
            self.subfile_size(set.without(k), k)
        })
    }

    /// Centralized plan: each file split evenly over the b-subsets.
    pub fn phase_plan_centralized(&self, b: usize) -> Result<PhasePlan<T>, AnalysisError> {
        let k_users = self.users();
        if b > k_users {
            return Err(AnalysisError::BadOrder { j: b, k: k_users });
        }
        let parts: T = crate::scalar::binomial(k_users, b);
        PhasePlan::build(&self.delta, PlanKind::Centralized { b }, |set, k| {
            if set.len() == b + 1 {
                self.sizes[k].clone() / parts.clone()
            } else {
                T::zero()
            }
        })
    }

    /// Plan driven by the exact sub-file counts of `pm` (sizes taken from the placement).
    pub fn phase_plan_realized(
        &self,
        pm: &PlacementMap,
        demand: &Demand,
    ) -> Result<PhasePlan<T>, AnalysisError> {
        let counts: Vec<BTreeMap<UserSet, u64>> = (0..self.users())
            .map(|k| pm.subfile_sizes(demand.file_of(k)))
            .collect();
        PhasePlan::build(&self.delta, PlanKind::Realized, |set, k| {
            let n = counts[k].get(&set.without(k)).copied().unwrap_or(0);
            T::from_count(n)
        })
    }

    /// `t_J^k` as the alternating sum `Σ_{H⊆J\{k}} (-1)^{|H|} w_{([K]\J)∪{k}∪H} F_k`.
    pub fn subphase_length_alternating(&self, set: UserSet, k: usize) -> Result<T, AnalysisError> {
        if !set.contains(k) {
            return Err(AnalysisError::NotMember { user: k + 1, set });
        }
        let base = self.full().difference(set).with(k);
        let mut plus = T::zero();
        let mut minus = T::zero();
        for h in set.without(k).subsets() {
            let w = self.weight(base.union(h))?;
            if h.len() % 2 == 0 {
                plus = plus + w;
            } else {
                minus = minus + w;
            }
        }
        Ok((plus - minus) * self.sizes[k].clone())
    }
}
