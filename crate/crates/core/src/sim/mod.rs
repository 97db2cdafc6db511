//! Packet-level execution of the multi-phase delivery scheme over an erasure
//! broadcast channel with per-slot state feedback.
//!
//! Pools are indexed by target set and drained in canonical order. A pool
//! tracks, for each member, how many more useful symbols it needs; a symbol
//! erased at a needing member but overheard outside the pool is promoted to
//! the enlarged set. With decoding enabled every symbol is a real random
//! linear combination over GF(2^8) and each user decodes its file at the end.

mod decode;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::gf::{axpy, GfError};
use crate::model::{Demand, ModelError, SystemConfig};
use crate::placement::PlacementMap;
use crate::userset::UserSet;

pub use decode::DecodeOutcome;

const ERASURE_STREAM: u64 = 1;
const COEFF_STREAM: u64 = 2;
const PAYLOAD_STREAM: u64 = 3;
const CLEANUP_STREAM: u64 = 4;

/// Largest K the simulator accepts (pools are indexed by bitmask).
pub const MAX_SIM_USERS: usize = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("placement covers {got} files, config has {expected}")]
    PlacementShape { got: usize, expected: usize },
    #[error("K = {0} exceeds the simulator limit of {MAX_SIM_USERS}")]
    TooManyUsers(usize),
    #[error("start phase {start} outside [1, K = {k}]")]
    BadStartPhase { start: usize, k: usize },
    #[error("user {user}: {unresolved} packets still unresolved after the cleanup budget of {budget} slots")]
    CleanupBudget {
        user: usize,
        unresolved: usize,
        budget: u64,
    },
    #[error("decoder: {0}")]
    Gf(#[from] GfError),
    #[error("payload of node {node} differs from the combination of true packet values")]
    PayloadMismatch { node: u32 },
}

/// What the users want at the start of the delivery phase.
#[derive(Debug, Clone, Copy)]
pub enum Workload<'a> {
    /// Each user wants its demanded file, minus what it cached.
    Files {
        placement: &'a PlacementMap,
        demand: &'a Demand,
    },
    /// `packets` messages per `order`-subset, each wanted by every member; no caches.
    OrderJ { order: usize, packets: u64 },
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Carry real coded symbols and decode every user at the end.
    pub decode: bool,
    /// Field elements per packet.
    pub payload_len: usize,
    /// Record one trace row per slot.
    pub trace: bool,
    /// Cleanup slots allowed per trial; `None` means `64·K`.
    pub cleanup_budget: Option<u64>,
    /// Re-derive every coded payload from ground truth (slow; for tests).
    pub verify_payloads: bool,
    /// Receiver sets for the first delivery slots, in order; random draws
    /// resume once the script runs out. Cleanup slots always draw.
    pub receiver_script: Vec<UserSet>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            decode: true,
            payload_len: 1,
            trace: false,
            cleanup_budget: None,
            verify_payloads: false,
            receiver_script: Vec::new(),
        }
    }
}

impl SimOptions {
    pub fn counting() -> Self {
        SimOptions {
            decode: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotAction {
    /// At least one needing user received the symbol; nothing promoted.
    Deliver,
    /// The symbol moved to a larger pool for the needing users that missed it.
    Promote,
    /// No needing user gained anything.
    Waste,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub slot: u64,
    /// Sub-phase target set, or `cleanup`.
    pub subphase: String,
    pub receivers: String,
    pub action: SlotAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub from: UserSet,
    pub to: UserSet,
    /// 1-based user.
    pub user: usize,
    pub count: u64,
}

/// Slots in sub-phase `J` during which user `k` still needed symbols, and how
/// many of those were useful to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Usefulness {
    pub subphase: UserSet,
    pub user: usize,
    pub needing_slots: u64,
    pub useful_slots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub slots_total: u64,
    #[serde(serialize_with = "ser_subphase_map")]
    pub slots_per_subphase: BTreeMap<UserSet, u64>,
    /// Per-user byte-exact recovery; `None` when decoding was disabled.
    pub decode_ok: Option<Vec<bool>>,
    pub cleanup_slots: u64,
    pub realized_transfers: Vec<Transfer>,
    #[serde(skip)]
    pub usefulness: Vec<Usefulness>,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
}

fn ser_subphase_map<S: Serializer>(m: &BTreeMap<UserSet, u64>, s: S) -> Result<S::Ok, S::Error> {
    let as_str: BTreeMap<String, u64> = m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    as_str.serialize(s)
}

impl SimResult {
    pub fn all_decoded(&self) -> bool {
        self.decode_ok
            .as_ref()
            .is_none_or(|v| v.iter().all(|&ok| ok))
    }

    pub fn transfer_count(&self, from: UserSet, to: UserSet, user: usize) -> u64 {
        self.realized_transfers
            .iter()
            .find(|t| t.from == from && t.to == to && t.user == user + 1)
            .map_or(0, |t| t.count)
    }
}

#[derive(Debug, Clone, Copy)]
struct Item {
    node: u32,
    needed_by: UserSet,
}

#[derive(Debug, Default)]
struct Pool {
    items: Vec<Item>,
    need: Vec<u64>,
}

/// Raw packets followed by coded symbols; each coded symbol lists its constituents.
pub(crate) struct Arena {
    pub num_raw: u32,
    pub payload_len: usize,
    pub children: Vec<Vec<(u32, u8)>>,
    pub payload: Vec<u8>,
}

impl Arena {
    pub fn payload(&self, node: u32) -> &[u8] {
        let l = self.payload_len;
        &self.payload[node as usize * l..(node as usize + 1) * l]
    }

    pub fn is_raw(&self, node: u32) -> bool {
        node < self.num_raw
    }

    pub fn children(&self, node: u32) -> &[(u32, u8)] {
        &self.children[(node - self.num_raw) as usize]
    }

    fn push_coded(&mut self, children: Vec<(u32, u8)>) -> u32 {
        let id = self.num_raw + self.children.len() as u32;
        let l = self.payload_len;
        let mut value = vec![0u8; l];
        for &(c, coef) in &children {
            axpy(&mut value, coef, self.payload(c));
        }
        self.payload.extend_from_slice(&value);
        self.children.push(children);
        id
    }

    /// Expansion of `node` over raw packets, evaluated on the raw payloads.
    fn recompute(&self, node: u32, memo: &mut HashMap<u32, Vec<u8>>) -> Vec<u8> {
        if self.is_raw(node) {
            return self.payload(node).to_vec();
        }
        if let Some(v) = memo.get(&node) {
            return v.clone();
        }
        let mut value = vec![0u8; self.payload_len];
        for &(c, coef) in self.children(node) {
            let cv = self.recompute(c, memo);
            axpy(&mut value, coef, &cv);
        }
        memo.insert(node, value.clone());
        value
    }
}

/// What a user observed: symbols received while it still needed something in
/// the pool (equations), and every symbol it holds (known values).
#[derive(Debug, Default, Clone)]
pub(crate) struct UserLog {
    pub rows: Vec<u32>,
    pub known: std::collections::HashSet<u32>,
}

/// Static description of the raw packets.
pub(crate) struct RawLayout {
    /// Cache set of every raw packet.
    pub cache: Vec<UserSet>,
    /// Raw packets each user must end up knowing.
    pub needed: Vec<Vec<u32>>,
}

struct Engine<'c> {
    cfg: &'c SystemConfig,
    users: usize,
    coded: bool,
    q: u32,
    erasure_rng: ChaCha8Rng,
    script: &'c [UserSet],
    coeff_rng: ChaCha8Rng,
    pools: Vec<Pool>,
    arena: Arena,
    logs: Vec<UserLog>,
    slots_per_subphase: Vec<u64>,
    transfers: BTreeMap<(UserSet, UserSet, usize), u64>,
    usefulness: Vec<[u64; 2]>,
    trace: Option<Vec<TraceRow>>,
    slot: u64,
}

impl Engine<'_> {
    fn draw_receivers(&mut self) -> UserSet {
        if let Some(&scripted) = self.script.get(self.slot as usize) {
            return scripted;
        }
        let mut s = UserSet::EMPTY;
        for (k, &d) in self.cfg.delta.iter().enumerate() {
            if self.erasure_rng.gen::<f64>() >= d {
                s = s.with(k);
            }
        }
        s
    }

    fn record(&mut self, subphase: UserSet, receivers: UserSet, action: SlotAction) {
        self.slot += 1;
        self.slots_per_subphase[subphase.bits() as usize] += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRow {
                slot: self.slot,
                subphase: subphase.to_string(),
                receivers: receivers.to_string(),
                action,
            });
        }
    }

    fn note_usefulness(&mut self, set: UserSet, needing: UserSet, receivers: UserSet) {
        let outside = !receivers.difference(set).is_empty();
        for k in needing.iter() {
            let e = &mut self.usefulness[set.bits() as usize * self.users + k];
            e[0] += 1;
            if outside || receivers.contains(k) {
                e[1] += 1;
            }
        }
    }

    fn promote(&mut self, from: UserSet, receivers: UserSet, missed: UserSet, node: Option<u32>) {
        let to = from.union(receivers);
        for m in missed.iter() {
            self.pools[from.bits() as usize].need[m] -= 1;
            self.pools[to.bits() as usize].need[m] += 1;
            *self.transfers.entry((from, to, m)).or_insert(0) += 1;
        }
        if let Some(node) = node {
            self.pools[to.bits() as usize].items.push(Item {
                node,
                needed_by: missed,
            });
            for r in receivers.iter() {
                self.logs[r].known.insert(node);
            }
        }
    }

    /// Sends the pool's raw packets one at a time until each is received by
    /// its user or overheard elsewhere.
    fn run_singleton(&mut self, set: UserSet) {
        let k = set.min().expect("nonempty");
        let idx = set.bits() as usize;
        let mut cursor = 0usize;
        while self.pools[idx].need[k] > 0 {
            let s = self.draw_receivers();
            self.note_usefulness(set, set, s);
            let node = self.coded.then(|| self.pools[idx].items[cursor].node);
            if s.contains(k) {
                self.pools[idx].need[k] -= 1;
                if let Some(node) = node {
                    self.logs[k].rows.push(node);
                    self.logs[k].known.insert(node);
                }
                cursor += 1;
                self.record(set, s, SlotAction::Deliver);
            } else if !s.is_empty() {
                self.promote(set, s, set, node);
                cursor += 1;
                self.record(set, s, SlotAction::Promote);
            } else {
                self.record(set, s, SlotAction::Waste);
            }
        }
    }

    fn random_combination(&mut self, set: UserSet, needing: UserSet) -> u32 {
        let idx = set.bits() as usize;
        let q = self.q;
        let children: Vec<(u32, u8)> = self.pools[idx]
            .items
            .iter()
            .filter(|it| !it.needed_by.intersection(needing).is_empty())
            .map(|it| (it.node, self.coeff_rng.gen_range(1..q) as u8))
            .collect();
        self.arena.push_coded(children)
    }

    /// Multicasts random combinations of the pool's outstanding items.
    fn run_multicast(&mut self, set: UserSet) {
        let idx = set.bits() as usize;
        loop {
            let needing = UserSet::from_users(set.iter().filter(|&k| self.pools[idx].need[k] > 0));
            if needing.is_empty() {
                break;
            }
            let s = self.draw_receivers();
            self.note_usefulness(set, needing, s);
            let node = self.coded.then(|| self.random_combination(set, needing));
            let hit = needing.intersection(s);
            for k in hit.iter() {
                self.pools[idx].need[k] -= 1;
                if let Some(node) = node {
                    self.logs[k].rows.push(node);
                    self.logs[k].known.insert(node);
                }
            }
            let missed = needing.difference(s);
            let action = if !missed.is_empty() && !s.difference(set).is_empty() {
                self.promote(set, s, missed, node);
                SlotAction::Promote
            } else if !hit.is_empty() {
                SlotAction::Deliver
            } else {
                SlotAction::Waste
            };
            self.record(set, s, action);
        }
    }
}

fn check_users(cfg: &SystemConfig) -> Result<(), SimError> {
    cfg.validate()?;
    if cfg.users > MAX_SIM_USERS {
        return Err(SimError::TooManyUsers(cfg.users));
    }
    Ok(())
}

/// Builds the raw packet space and the initial pool contents.
fn layout(
    cfg: &SystemConfig,
    workload: &Workload,
) -> Result<(RawLayout, Vec<(UserSet, UserSet)>), SimError> {
    let k_users = cfg.users;
    let mut cache = Vec::new();
    let mut needed = vec![Vec::new(); k_users];
    // (pool, needed_by) per raw packet that starts in a pool
    let mut seeds = Vec::new();
    match *workload {
        Workload::Files { placement, demand } => {
            if placement.files.len() != cfg.files {
                return Err(SimError::PlacementShape {
                    got: placement.files.len(),
                    expected: cfg.files,
                });
            }
            Demand::new(demand.files().to_vec(), cfg)?;
            let mut owner = vec![None; cfg.files];
            for k in 0..k_users {
                owner[demand.file_of(k)] = Some(k);
            }
            for (file, packets) in placement.files.iter().enumerate() {
                for &set in packets {
                    let id = cache.len() as u32;
                    cache.push(set);
                    if let Some(k) = owner[file] {
                        if !set.contains(k) {
                            needed[k].push(id);
                            seeds.push((set.with(k), UserSet::singleton(k)));
                            continue;
                        }
                    }
                    seeds.push((UserSet::EMPTY, UserSet::EMPTY));
                }
            }
        }
        Workload::OrderJ { order, packets } => {
            if order == 0 || order > k_users {
                return Err(SimError::BadStartPhase {
                    start: order,
                    k: k_users,
                });
            }
            for set in UserSet::of_size(k_users, order) {
                for _ in 0..packets {
                    let id = cache.len() as u32;
                    cache.push(UserSet::EMPTY);
                    for k in set.iter() {
                        needed[k].push(id);
                    }
                    seeds.push((set, set));
                }
            }
        }
    }
    Ok((RawLayout { cache, needed }, seeds))
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one delivery trial.
pub fn simulate(
    cfg: &SystemConfig,
    workload: Workload,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    check_users(cfg)?;
    let k_users = cfg.users;
    let (raw, seeds) = layout(cfg, &workload)?;
    let num_raw = raw.cache.len() as u32;
    let payload_len = if opts.decode {
        opts.payload_len.max(1)
    } else {
        0
    };

    let mut payload = vec![0u8; num_raw as usize * payload_len];
    if opts.decode {
        trial_rng(seed, PAYLOAD_STREAM).fill(&mut payload[..]);
    }

    let mut pools: Vec<Pool> = (0..1usize << k_users)
        .map(|_| Pool {
            items: Vec::new(),
            need: vec![0; k_users],
        })
        .collect();
    for (id, &(pool, needed_by)) in seeds.iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        let p = &mut pools[pool.bits() as usize];
        for k in needed_by.iter() {
            p.need[k] += 1;
        }
        if opts.decode {
            p.items.push(Item {
                node: id as u32,
                needed_by,
            });
        }
    }

    let mut engine = Engine {
        cfg,
        users: k_users,
        coded: opts.decode,
        q: cfg.field_order,
        erasure_rng: trial_rng(seed, ERASURE_STREAM),
        script: &opts.receiver_script,
        coeff_rng: trial_rng(seed, COEFF_STREAM),
        pools,
        arena: Arena {
            num_raw,
            payload_len,
            children: Vec::new(),
            payload,
        },
        logs: vec![UserLog::default(); k_users],
        slots_per_subphase: vec![0; 1 << k_users],
        transfers: BTreeMap::new(),
        usefulness: vec![[0, 0]; (1 << k_users) * k_users],
        trace: opts.trace.then(Vec::new),
        slot: 0,
    };

    for set in UserSet::all_nonempty(k_users) {
        if set.len() == 1 {
            engine.run_singleton(set);
        } else {
            engine.run_multicast(set);
        }
    }

    if opts.verify_payloads {
        let mut memo = HashMap::new();
        for i in 0..engine.arena.children.len() as u32 {
            let node = num_raw + i;
            if engine.arena.recompute(node, &mut memo) != engine.arena.payload(node) {
                return Err(SimError::PayloadMismatch { node });
            }
        }
    }

    let mut cleanup_slots = 0u64;
    let decode_ok = if opts.decode {
        let budget = opts.cleanup_budget.unwrap_or(64 * k_users as u64);
        let mut cleanup_rng = trial_rng(seed, CLEANUP_STREAM);
        let mut ok = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let outcome = decode::decode_user(
                k,
                &engine.arena,
                &engine.logs[k],
                &raw,
                cfg,
                budget - cleanup_slots,
                &mut cleanup_rng,
                &mut |receivers| {
                    engine.slot += 1;
                    if let Some(t) = engine.trace.as_mut() {
                        t.push(TraceRow {
                            slot: engine.slot,
                            subphase: "cleanup".into(),
                            receivers: receivers.to_string(),
                            action: SlotAction::Deliver,
                        });
                    }
                },
            )
            .map_err(|e| match e {
                decode::DecodeError::Budget { unresolved } => SimError::CleanupBudget {
                    user: k + 1,
                    unresolved,
                    budget,
                },
                decode::DecodeError::Gf(g) => SimError::Gf(g),
            })?;
            cleanup_slots += outcome.cleanup_slots;
            ok.push(outcome.exact);
        }
        Some(ok)
    } else {
        None
    };

    let slots_per_subphase: BTreeMap<UserSet, u64> = UserSet::all_nonempty(k_users)
        .into_iter()
        .filter(|s| engine.slots_per_subphase[s.bits() as usize] > 0)
        .map(|s| (s, engine.slots_per_subphase[s.bits() as usize]))
        .collect();
    let subphase_total: u64 = slots_per_subphase.values().sum();
    let usefulness = UserSet::all_nonempty(k_users)
        .into_iter()
        .flat_map(|s| s.iter().map(move |k| (s, k)))
        .filter_map(|(s, k)| {
            let [n, u] = engine.usefulness[s.bits() as usize * k_users + k];
            (n > 0).then_some(Usefulness {
                subphase: s,
                user: k + 1,
                needing_slots: n,
                useful_slots: u,
            })
        })
        .collect();
    Ok(SimResult {
        seed,
        slots_total: subphase_total + cleanup_slots,
        slots_per_subphase,
        decode_ok,
        cleanup_slots,
        realized_transfers: engine
            .transfers
            .into_iter()
            .map(|((from, to, k), count)| Transfer {
                from,
                to,
                user: k + 1,
                count,
            })
            .collect(),
        usefulness,
        trace: engine.trace,
    })
}

/// Runs one trial from phase `start_phase`: phase 1 delivers the demanded
/// files; a later start delivers `F` order-`start_phase` messages per subset,
/// `F` being the average file size.
pub fn run_delivery(
    cfg: &SystemConfig,
    placement: &PlacementMap,
    demand: &Demand,
    seed: u64,
    start_phase: usize,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    let workload = match start_phase {
        0 => {
            return Err(SimError::BadStartPhase {
                start: 0,
                k: cfg.users,
            })
        }
        1 => Workload::Files { placement, demand },
        j => Workload::OrderJ {
            order: j,
            packets: cfg.average_file_size().round() as u64,
        },
    };
    simulate(cfg, workload, seed, opts)
}
