//! Subsets of users stored as bitmasks.
//!
//! Users are 0-based internally. On every external surface (JSON, CSV,
//! `Display`) a set is written as the sorted list of 1-based indices.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest user count a [`UserSet`] can hold.
pub const MAX_USERS: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct UserSet(u32);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub fn from_bits(bits: u32) -> Self {
        UserSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// `{0, …, k-1}`.
    pub fn full(k: usize) -> Self {
        assert!(k <= MAX_USERS, "at most {MAX_USERS} users");
        if k == MAX_USERS {
            UserSet(u32::MAX)
        } else {
            UserSet((1u32 << k) - 1)
        }
    }

    pub fn singleton(user: usize) -> Self {
        UserSet(1 << user)
    }

    pub fn from_users<I: IntoIterator<Item = usize>>(users: I) -> Self {
        users.into_iter().fold(UserSet::EMPTY, |s, u| s.with(u))
    }

    /// Builds a set from 1-based indices, as written in configs and on the CLI.
    pub fn from_one_based(users: &[usize]) -> Option<Self> {
        let mut set = UserSet::EMPTY;
        for &u in users {
            if u == 0 || u > MAX_USERS {
                return None;
            }
            set = set.with(u - 1);
        }
        Some(set)
    }

    pub fn contains(self, user: usize) -> bool {
        user < MAX_USERS && self.0 & (1 << user) != 0
    }

    pub fn with(self, user: usize) -> Self {
        UserSet(self.0 | (1 << user))
    }

    pub fn without(self, user: usize) -> Self {
        UserSet(self.0 & !(1 << user))
    }

    pub fn union(self, other: UserSet) -> Self {
        UserSet(self.0 | other.0)
    }

    pub fn intersection(self, other: UserSet) -> Self {
        UserSet(self.0 & other.0)
    }

    pub fn difference(self, other: UserSet) -> Self {
        UserSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: UserSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn min(self) -> Option<usize> {
        (!self.is_empty()).then(|| self.0.trailing_zeros() as usize)
    }

    /// Members in ascending order.
    pub fn iter(self) -> Members {
        Members(self.0)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn to_one_based(self) -> Vec<usize> {
        self.iter().map(|u| u + 1).collect()
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> Subsets {
        Subsets {
            universe: self.0,
            next: Some(0),
        }
    }

    /// Canonical order: by cardinality, then lexicographic on the sorted member list.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.iter().cmp(other.iter()))
    }

    /// Every nonempty subset of `{0, …, k-1}` in canonical order.
    pub fn all_nonempty(k: usize) -> Vec<UserSet> {
        let mut sets: Vec<UserSet> = UserSet::full(k)
            .subsets()
            .filter(|s| !s.is_empty())
            .collect();
        sets.sort_by(UserSet::canonical_cmp);
        sets
    }

    /// All subsets of `{0, …, k-1}` with exactly `size` members, lexicographic.
    pub fn of_size(k: usize, size: usize) -> Vec<UserSet> {
        let mut sets: Vec<UserSet> = UserSet::full(k)
            .subsets()
            .filter(|s| s.len() == size)
            .collect();
        sets.sort_by(UserSet::canonical_cmp);
        sets
    }
}

impl PartialOrd for UserSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for UserSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_cmp(other)
    }
}

pub struct Members(u32);

impl Iterator for Members {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let u = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(u)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Members {}

/// Submask enumeration in increasing bit order.
pub struct Subsets {
    universe: u32,
    next: Option<u32>,
}

impl Iterator for Subsets {
    type Item = UserSet;

    fn next(&mut self) -> Option<UserSet> {
        let cur = self.next?;
        self.next = if cur == self.universe {
            None
        } else {
            // next submask above `cur`
            Some(((cur | !self.universe).wrapping_add(1)) & self.universe)
        };
        Some(UserSet(cur))
    }
}

impl fmt::Debug for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, u) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u + 1)?;
        }
        write!(f, "]")
    }
}

impl Serialize for UserSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for UserSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let users = Vec::<usize>::deserialize(deserializer)?;
        UserSet::from_one_based(&users)
            .ok_or_else(|| serde::de::Error::custom("user indices are 1-based and at most 32"))
    }
}
