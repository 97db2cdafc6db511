//! Cache placement: which users store each packet of each file.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemConfig;
use crate::scalar::binomial_u64;
use crate::userset::UserSet;

/// Stream id mixed into the seed for placement draws.
pub(crate) const PLACEMENT_STREAM: u64 = 0x706c_6163;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    Decentralized,
    Centralized { b: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("centralized placement needs equal cache sizes; user {user} has {got} vs {expected}")]
    UnequalMemory {
        user: usize,
        got: f64,
        expected: f64,
    },
    #[error("b = MK/N = {0} is not an integer")]
    NonIntegerB(f64),
    #[error("file {file} has {size} packets, not divisible by C(K,b) = {parts}")]
    Indivisible { file: usize, size: u64, parts: u64 },
}

/// Cache set of every packet of every file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementMap {
    #[serde(flatten)]
    pub scheme: Scheme,
    pub users: usize,
    /// `files[i][f]` is the set of users caching packet `f` of file `i`.
    pub files: Vec<Vec<UserSet>>,
}

/// Each user caches each packet independently with probability `p_k = M_k/N`.
pub fn decentralized_place(cfg: &SystemConfig, seed: u64) -> PlacementMap {
    let p = cfg.cache_fractions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PLACEMENT_STREAM);
    let files = cfg
        .file_sizes
        .iter()
        .map(|&size| {
            (0..size)
                .map(|_| {
                    let mut set = UserSet::EMPTY;
                    for (k, &pk) in p.iter().enumerate() {
                        if rng.gen_bool(pk.clamp(0.0, 1.0)) {
                            set = set.with(k);
                        }
                    }
                    set
                })
                .collect()
        })
        .collect();
    PlacementMap {
        scheme: Scheme::Decentralized,
        users: cfg.users,
        files,
    }
}

/// Integer `b = MK/N` for an equal-memory configuration.
pub fn centralized_b(cfg: &SystemConfig) -> Result<usize, PlacementError> {
    let m = cfg.mem[0];
    for (k, &mk) in cfg.mem.iter().enumerate() {
        if mk != m {
            return Err(PlacementError::UnequalMemory {
                user: k + 1,
                got: mk,
                expected: m,
            });
        }
    }
    let b = m * cfg.users as f64 / cfg.files as f64;
    let rounded = b.round();
    if (b - rounded).abs() > 1e-9 {
        return Err(PlacementError::NonIntegerB(b));
    }
    Ok(rounded as usize)
}

/// Splits every file into `C(K,b)` equal runs; run `r` goes to the `r`-th b-subset.
pub fn centralized_place(cfg: &SystemConfig) -> Result<PlacementMap, PlacementError> {
    let b = centralized_b(cfg)?;
    let subsets = UserSet::of_size(cfg.users, b);
    let parts = subsets.len() as u64;
    debug_assert_eq!(parts, binomial_u64(cfg.users, b));
    let mut files = Vec::with_capacity(cfg.files);
    for (i, &size) in cfg.file_sizes.iter().enumerate() {
        if size % parts != 0 {
            return Err(PlacementError::Indivisible {
                file: i + 1,
                size,
                parts,
            });
        }
        let run = size / parts;
        let mut sets = Vec::with_capacity(size as usize);
        for s in &subsets {
            sets.extend(std::iter::repeat_n(*s, run as usize));
        }
        files.push(sets);
    }
    Ok(PlacementMap {
        scheme: Scheme::Centralized { b },
        users: cfg.users,
        files,
    })
}

impl PlacementMap {
    pub fn cache_set(&self, file: usize, packet: usize) -> UserSet {
        self.files[file][packet]
    }

    /// Fraction of `file` cached by none of `users`; 1 for an empty file.
    pub fn unknown_fraction(&self, file: usize, users: UserSet) -> f64 {
        let packets = &self.files[file];
        if packets.is_empty() {
            return 1.0;
        }
        let unknown = packets
            .iter()
            .filter(|s| s.intersection(users).is_empty())
            .count();
        unknown as f64 / packets.len() as f64
    }

    /// Packet count of each sub-file `L_J(W_i)`, keyed by the exact caching set.
    pub fn subfile_sizes(&self, file: usize) -> BTreeMap<UserSet, u64> {
        let mut out = BTreeMap::new();
        for &s in &self.files[file] {
            *out.entry(s).or_insert(0) += 1;
        }
        out
    }

    /// Number of packets user `k` stores, over all files.
    pub fn cache_packets(&self, k: usize) -> u64 {
        self.files
            .iter()
            .flatten()
            .filter(|s| s.contains(k))
            .count() as u64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("placement map serializes")
    }
}
