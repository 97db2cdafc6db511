//! Per-user decoding of stored symbols and cleanup retransmission.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Arena, RawLayout, UserLog};
use crate::gf::{axpy, Eliminator, GfError};
use crate::model::SystemConfig;
use crate::userset::UserSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOutcome {
    /// Every needed packet was recovered and equals the transmitted value.
    pub exact: bool,
    pub cleanup_slots: u64,
}

#[derive(Debug)]
pub(crate) enum DecodeError {
    Budget { unresolved: usize },
    Gf(GfError),
}

impl From<GfError> for DecodeError {
    fn from(e: GfError) -> Self {
        DecodeError::Gf(e)
    }
}

/// `value = coeffs · x[lo..] + known`, where `x` are the raw packets the user
/// does not hold, indexed by the user's column order.
struct Expansion {
    lo: usize,
    coeffs: Vec<u8>,
    known: Vec<u8>,
}

impl Expansion {
    fn end(&self) -> usize {
        self.lo + self.coeffs.len()
    }
}

/// Columns of the user's residual system, assigned on first appearance.
struct Columns {
    of_raw: Vec<u32>,
    count: usize,
}

impl Columns {
    const NONE: u32 = u32::MAX;

    fn new(num_raw: usize) -> Self {
        Columns {
            of_raw: vec![Self::NONE; num_raw],
            count: 0,
        }
    }

    fn get(&self, id: u32) -> Option<usize> {
        let c = self.of_raw[id as usize];
        (c != Self::NONE).then_some(c as usize)
    }

    fn col(&mut self, id: u32) -> usize {
        if let Some(c) = self.get(id) {
            return c;
        }
        self.of_raw[id as usize] = self.count as u32;
        self.count += 1;
        self.count - 1
    }

    fn dense(&mut self, terms: &[(u32, u8)]) -> Vec<u8> {
        let cols: Vec<(usize, u8)> = terms.iter().map(|&(id, c)| (self.col(id), c)).collect();
        let mut row = vec![0u8; self.count];
        for (c, v) in cols {
            row[c] = v;
        }
        row
    }
}

struct UserView<'a> {
    user: usize,
    arena: &'a Arena,
    log: &'a UserLog,
    cache: &'a [UserSet],
    memo: Vec<Option<Rc<Expansion>>>,
    columns: Columns,
}

impl UserView<'_> {
    fn raw(&mut self, node: u32) -> Expansion {
        if self.cache[node as usize].contains(self.user) {
            Expansion {
                lo: 0,
                coeffs: Vec::new(),
                known: self.arena.payload(node).to_vec(),
            }
        } else {
            Expansion {
                lo: self.columns.col(node),
                coeffs: vec![1],
                known: vec![0; self.arena.payload_len],
            }
        }
    }

    fn combine(&mut self, node: u32) -> Expansion {
        let parts: Vec<(Rc<Expansion>, u8)> = self
            .arena
            .children(node)
            .iter()
            .map(|&(child, coef)| (self.expand(child), coef))
            .collect();
        let mut known = vec![0u8; self.arena.payload_len];
        let mut lo = usize::MAX;
        let mut end = 0;
        for (e, _) in &parts {
            if !e.coeffs.is_empty() {
                lo = lo.min(e.lo);
                end = end.max(e.end());
            }
        }
        if lo == usize::MAX {
            lo = 0;
            end = 0;
        }
        let mut coeffs = vec![0u8; end - lo];
        for (e, coef) in &parts {
            axpy(&mut coeffs[e.lo.max(lo) - lo..], *coef, &e.coeffs);
            axpy(&mut known, *coef, &e.known);
        }
        let first = coeffs.iter().position(|&c| c != 0).unwrap_or(coeffs.len());
        let last = coeffs
            .iter()
            .rposition(|&c| c != 0)
            .map_or(first, |i| i + 1);
        Expansion {
            lo: lo + first,
            coeffs: coeffs[first..last].to_vec(),
            known,
        }
    }

    /// What the user can say about `node` without using `node`'s own payload
    /// unless it already holds it.
    fn expand(&mut self, node: u32) -> Rc<Expansion> {
        if let Some(e) = &self.memo[node as usize] {
            return e.clone();
        }
        let e = if self.log.known.contains(&node) {
            Expansion {
                lo: 0,
                coeffs: Vec::new(),
                known: self.arena.payload(node).to_vec(),
            }
        } else if self.arena.is_raw(node) {
            self.raw(node)
        } else {
            self.combine(node)
        };
        let e = Rc::new(e);
        self.memo[node as usize] = Some(e.clone());
        e
    }

    /// Equation contributed by a received symbol: its expansion through its
    /// constituents, with the known part moved to the right-hand side.
    fn equation(&mut self, node: u32) -> Expansion {
        let mut e = if self.arena.is_raw(node) {
            self.raw(node)
        } else {
            self.combine(node)
        };
        let mut rhs = self.arena.payload(node).to_vec();
        axpy(&mut rhs, 1, &e.known);
        e.known = rhs;
        e
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn decode_user(
    user: usize,
    arena: &Arena,
    log: &UserLog,
    raw: &RawLayout,
    cfg: &SystemConfig,
    budget: u64,
    rng: &mut ChaCha8Rng,
    on_cleanup_slot: &mut dyn FnMut(UserSet),
) -> Result<DecodeOutcome, DecodeError> {
    let needed = &raw.needed[user];
    let mut view = UserView {
        user,
        arena,
        log,
        cache: &raw.cache,
        memo: vec![None; arena.num_raw as usize + arena.children.len()],
        columns: Columns::new(arena.num_raw as usize),
    };
    let mut elim = Eliminator::new(arena.payload_len);

    for &node in &log.rows {
        if arena.is_raw(node) {
            // held directly
            continue;
        }
        let eq = view.equation(node);
        if eq.coeffs.is_empty() {
            if eq.known.iter().any(|&b| b != 0) {
                return Err(GfError::Inconsistent.into());
            }
            continue;
        }
        elim.add_row_at(eq.lo, &eq.coeffs, &eq.known)?;
    }
    let mut columns = view.columns;

    let lookup = |id: u32, elim: &Eliminator, columns: &Columns| -> Option<Vec<u8>> {
        if log.known.contains(&id) {
            return Some(arena.payload(id).to_vec());
        }
        let c = columns.get(id)?;
        elim.value(c).map(|v| v.to_vec())
    };

    let mut unresolved: Vec<u32> = needed
        .iter()
        .copied()
        .filter(|&id| lookup(id, &elim, &columns).is_none())
        .collect();

    let q = cfg.field_order;
    let mut slots = 0u64;
    while !unresolved.is_empty() {
        if slots >= budget {
            return Err(DecodeError::Budget {
                unresolved: unresolved.len(),
            });
        }
        let coeffs: Vec<u8> = loop {
            let c: Vec<u8> = unresolved
                .iter()
                .map(|_| rng.gen_range(0..q) as u8)
                .collect();
            if c.iter().any(|&x| x != 0) {
                break c;
            }
        };
        let mut payload = vec![0u8; arena.payload_len];
        for (&id, &c) in unresolved.iter().zip(&coeffs) {
            axpy(&mut payload, c, arena.payload(id));
        }
        let mut receivers = UserSet::EMPTY;
        for (k, &d) in cfg.delta.iter().enumerate() {
            if rng.gen::<f64>() >= d {
                receivers = receivers.with(k);
            }
        }
        slots += 1;
        on_cleanup_slot(receivers);
        if receivers.contains(user) {
            let terms: Vec<(u32, u8)> = unresolved
                .iter()
                .zip(&coeffs)
                .filter(|(_, &c)| c != 0)
                .map(|(&id, &c)| (id, c))
                .collect();
            let row = columns.dense(&terms);
            elim.add_row(&row, &payload)?;
            unresolved.retain(|&id| lookup(id, &elim, &columns).is_none());
        }
    }

    let exact = needed
        .iter()
        .all(|&id| lookup(id, &elim, &columns).is_some_and(|v| v == arena.payload(id)));
    Ok(DecodeOutcome {
        exact,
        cleanup_slots: slots,
    })
}
