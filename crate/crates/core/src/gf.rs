//! GF(2^8) arithmetic under x^8+x^4+x^3+x+1 (0x11B), sparse coefficient
//! vectors over the global packet space, and a Gaussian-elimination solver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const POLY: u16 = 0x11B;

const fn xtime(a: u8) -> u8 {
    let shifted = (a as u16) << 1;
    if shifted & 0x100 != 0 {
        (shifted ^ POLY) as u8
    } else {
        shifted as u8
    }
}

const fn build_exp_log() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u8 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x;
        log[x as usize] = i as u8;
        // x *= 0x03, a generator of the multiplicative group (0x02 is not)
        x = xtime(x) ^ x;
        i += 1;
    }
    let mut j = 255;
    while j < 512 {
        exp[j] = exp[j - 255];
        j += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_exp_log();
static EXP: [u8; 512] = TABLES.0;
static LOG: [u8; 256] = TABLES.1;

const fn build_mul_table() -> [[u8; 256]; 256] {
    let mut t = [[0u8; 256]; 256];
    let mut a = 1;
    while a < 256 {
        let mut b = 1;
        while b < 256 {
            t[a][b] = TABLES.0[TABLES.1[a] as usize + TABLES.1[b] as usize];
            b += 1;
        }
        a += 1;
    }
    t
}

/// Full product table; row `c` maps `x ↦ c·x`.
static MUL: [[u8; 256]; 256] = build_mul_table();

const fn build_nibble_tables() -> [[[u8; 16]; 2]; 256] {
    let mul = build_mul_table();
    let mut t = [[[0u8; 16]; 2]; 256];
    let mut c = 0;
    while c < 256 {
        let mut n = 0;
        while n < 16 {
            t[c][0][n] = mul[c][n];
            t[c][1][n] = mul[c][n << 4];
            n += 1;
        }
        c += 1;
    }
    t
}

/// `c·x = NIBBLE[c][0][x & 15] ^ NIBBLE[c][1][x >> 4]`, by linearity over GF(2).
static NIBBLE: [[[u8; 16]; 2]; 256] = build_nibble_tables();

#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    MUL[a as usize][b as usize]
}

#[inline]
pub fn gf_inv(a: u8) -> u8 {
    assert!(a != 0, "zero has no inverse in GF(256)");
    EXP[255 - LOG[a as usize] as usize]
}

/// `dst ^= c · src` elementwise over the common prefix of the two slices.
#[inline]
pub fn axpy(dst: &mut [u8], c: u8, src: &[u8]) {
    if c == 0 {
        return;
    }
    let n = dst.len().min(src.len());
    #[cfg(target_arch = "x86_64")]
    if n >= 32 && std::is_x86_feature_detected!("ssse3") {
        // SAFETY: the feature was detected at runtime.
        unsafe { axpy_ssse3(&mut dst[..n], c, &src[..n]) };
        return;
    }
    axpy_scalar(&mut dst[..n], c, &src[..n]);
}

fn axpy_scalar(dst: &mut [u8], c: u8, src: &[u8]) {
    let row = &MUL[c as usize];
    for (d, &s) in dst.iter_mut().zip(src) {
        *d ^= row[s as usize];
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "ssse3")]
unsafe fn axpy_ssse3(dst: &mut [u8], c: u8, src: &[u8]) {
    use std::arch::x86_64::*;
    let [lo, hi] = &NIBBLE[c as usize];
    let lo = _mm_loadu_si128(lo.as_ptr() as *const __m128i);
    let hi = _mm_loadu_si128(hi.as_ptr() as *const __m128i);
    let mask = _mm_set1_epi8(0x0f);
    let chunks = dst.len() / 16;
    for i in 0..chunks {
        let s = _mm_loadu_si128(src.as_ptr().add(16 * i) as *const __m128i);
        let d = _mm_loadu_si128(dst.as_ptr().add(16 * i) as *const __m128i);
        let l = _mm_shuffle_epi8(lo, _mm_and_si128(s, mask));
        let h = _mm_shuffle_epi8(hi, _mm_and_si128(_mm_srli_epi16(s, 4), mask));
        let r = _mm_xor_si128(d, _mm_xor_si128(l, h));
        _mm_storeu_si128(dst.as_mut_ptr().add(16 * i) as *mut __m128i, r);
    }
    let done = chunks * 16;
    axpy_scalar(&mut dst[done..], c, &src[done..]);
}

/// `v *= c` elementwise.
#[inline]
pub fn scale(v: &mut [u8], c: u8) {
    let row = &MUL[c as usize];
    for x in v.iter_mut() {
        *x = row[*x as usize];
    }
}

/// Element of GF(2^8).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    pub fn inv(self) -> Option<Gf256> {
        (self.0 != 0).then(|| Gf256(gf_inv(self.0)))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

impl Add for Gf256 {
    type Output = Gf256;
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf256 {
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    fn mul(self, rhs: Gf256) -> Gf256 {
        Gf256(gf_mul(self.0, rhs.0))
    }
}

impl Div for Gf256 {
    type Output = Gf256;
    fn div(self, rhs: Gf256) -> Gf256 {
        self * rhs.inv().expect("division by zero in GF(256)")
    }
}

/// Index of a packet in the global packet space (all files, then any synthetic messages).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct PacketId(pub u32);

/// Linear form over packets; never stores a zero coefficient.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseVector {
    entries: BTreeMap<PacketId, Gf256>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unit(id: PacketId) -> Self {
        let mut v = Self::new();
        v.add_term(id, Gf256::ONE);
        v
    }

    pub fn get(&self, id: PacketId) -> Gf256 {
        self.entries.get(&id).copied().unwrap_or(Gf256::ZERO)
    }

    /// `self[id] += c`, dropping the entry if it cancels.
    pub fn add_term(&mut self, id: PacketId, c: Gf256) {
        if c.is_zero() {
            return;
        }
        let e = self.entries.entry(id).or_insert(Gf256::ZERO);
        *e += c;
        if e.is_zero() {
            self.entries.remove(&id);
        }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: Gf256, other: &SparseVector) {
        for (&id, &v) in &other.entries {
            self.add_term(id, c * v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PacketId, Gf256)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn support(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies the form to concrete packet payloads.
    pub fn evaluate(&self, value_of: impl Fn(PacketId) -> Vec<u8>, payload_len: usize) -> Vec<u8> {
        let mut out = vec![0u8; payload_len];
        for (id, c) in self.iter() {
            axpy(&mut out, c.0, &value_of(id));
        }
        out
    }
}

impl FromIterator<(PacketId, Gf256)> for SparseVector {
    fn from_iter<I: IntoIterator<Item = (PacketId, Gf256)>>(iter: I) -> Self {
        let mut v = SparseVector::new();
        for (id, c) in iter {
            v.add_term(id, c);
        }
        v
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GfError {
    #[error("inconsistent linear system: a row reduced to 0 = nonzero")]
    Inconsistent,
    #[error("row references packet {0:?} outside the declared unknowns")]
    UnknownPacket(PacketId),
}

/// Rows `coeffs · x = payload` over the declared unknown packets.
#[derive(Clone, Debug, Default)]
pub struct LinearSystem {
    pub rows: Vec<(SparseVector, Vec<u8>)>,
    pub unknowns: BTreeSet<PacketId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub values: BTreeMap<PacketId, Vec<u8>>,
    pub unresolved: BTreeSet<PacketId>,
}

impl Solution {
    pub fn is_complete(&self) -> bool {
        self.unresolved.is_empty()
    }
}

impl LinearSystem {
    pub fn new(unknowns: impl IntoIterator<Item = PacketId>) -> Self {
        LinearSystem {
            rows: Vec::new(),
            unknowns: unknowns.into_iter().collect(),
        }
    }

    pub fn push(&mut self, coeffs: SparseVector, payload: Vec<u8>) {
        self.rows.push((coeffs, payload));
    }

    /// Gaussian elimination. Unknowns that the rows pin down are returned in
    /// `values`; the rest are listed in `unresolved`.
    pub fn solve(&self) -> Result<Solution, GfError> {
        let cols: Vec<PacketId> = self.unknowns.iter().copied().collect();
        let index: BTreeMap<PacketId, usize> =
            cols.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let payload_len = self.rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut elim = Eliminator::new(payload_len);
        let mut dense = vec![0u8; cols.len()];
        for (coeffs, payload) in &self.rows {
            dense.iter_mut().for_each(|x| *x = 0);
            for (id, c) in coeffs.iter() {
                let &col = index.get(&id).ok_or(GfError::UnknownPacket(id))?;
                dense[col] = c.0;
            }
            elim.add_row(&dense, payload)?;
        }
        let mut values = BTreeMap::new();
        let mut unresolved = BTreeSet::new();
        for (col, &id) in cols.iter().enumerate() {
            match elim.value(col) {
                Some(v) => {
                    values.insert(id, v.to_vec());
                }
                None => {
                    unresolved.insert(id);
                }
            }
        }
        Ok(Solution { values, unresolved })
    }
}

/// Pivot row stored from its pivot column `lead` through its last nonzero;
/// columns outside that span are zero.
struct PivotRow {
    lead: usize,
    coeffs: Vec<u8>,
    payload: Vec<u8>,
}

impl PivotRow {
    fn end(&self) -> usize {
        self.lead + self.coeffs.len()
    }

    fn at(&self, col: usize) -> u8 {
        if col < self.lead {
            0
        } else {
            self.coeffs.get(col - self.lead).copied().unwrap_or(0)
        }
    }
}

/// Incremental reduced-row-echelon elimination.
///
/// Columns may be added at any time; a row shorter than the current width is
/// zero-padded. Row operations only touch the span between a row's pivot and
/// its last nonzero, so systems whose rows are banded stay cheap.
pub struct Eliminator {
    payload_len: usize,
    width: usize,
    rows: Vec<PivotRow>,
    pivot_of: Vec<Option<usize>>,
}

impl Eliminator {
    pub fn new(payload_len: usize) -> Self {
        Eliminator {
            payload_len,
            width: 0,
            rows: Vec::new(),
            pivot_of: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Adds `coeffs · x = payload`. Returns whether the rank grew.
    pub fn add_row(&mut self, coeffs: &[u8], payload: &[u8]) -> Result<bool, GfError> {
        self.add_row_at(0, coeffs, payload)
    }

    /// Adds a row whose first `offset` coefficients are zero and whose
    /// remaining ones are `coeffs`.
    pub fn add_row_at(
        &mut self,
        offset: usize,
        coeffs: &[u8],
        payload: &[u8],
    ) -> Result<bool, GfError> {
        if offset + coeffs.len() > self.width {
            self.width = offset + coeffs.len();
            self.pivot_of.resize(self.width, None);
        }
        let mut row = vec![0u8; offset];
        row.extend_from_slice(coeffs);
        let mut rhs = payload.to_vec();
        rhs.resize(self.payload_len, 0);

        let mut col = offset;
        while col < row.len() {
            let c = row[col];
            if c != 0 {
                if let Some(r) = self.pivot_of[col] {
                    let piv = &self.rows[r];
                    if row.len() < piv.end() {
                        row.resize(piv.end(), 0);
                    }
                    axpy(&mut row[piv.lead..], c, &piv.coeffs);
                    axpy(&mut rhs, c, &piv.payload);
                }
            }
            col += 1;
        }
        let Some(lead) = row.iter().position(|&c| c != 0) else {
            return if rhs.iter().all(|&b| b == 0) {
                Ok(false)
            } else {
                Err(GfError::Inconsistent)
            };
        };
        let last = row.iter().rposition(|&c| c != 0).expect("lead is nonzero");
        let mut span = row[lead..=last].to_vec();
        let inv = gf_inv(span[0]);
        scale(&mut span, inv);
        scale(&mut rhs, inv);
        // keep every other pivot row clear of the new pivot column
        for other in self.rows.iter_mut() {
            let c = other.at(lead);
            if c == 0 {
                continue;
            }
            let end = last + 1;
            if other.end() < end {
                other.coeffs.resize(end - other.lead, 0);
            }
            axpy(&mut other.coeffs[lead - other.lead..], c, &span);
            axpy(&mut other.payload, c, &rhs);
            while other.coeffs.last() == Some(&0) {
                other.coeffs.pop();
            }
        }
        self.pivot_of[lead] = Some(self.rows.len());
        self.rows.push(PivotRow {
            lead,
            coeffs: span,
            payload: rhs,
        });
        Ok(true)
    }

    /// Value of column `col` if the rows determine it.
    pub fn value(&self, col: usize) -> Option<&[u8]> {
        let r = (*self.pivot_of.get(col)?)?;
        let row = &self.rows[r];
        (row.coeffs.len() == 1).then_some(row.payload.as_slice())
    }

    pub fn is_resolved(&self, col: usize) -> bool {
        self.value(col).is_some()
    }
}
