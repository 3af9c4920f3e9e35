//! Sparse factor layouts.
//!
//! A protocol fixes, for each of `M` factors and each of `N` rows, the `K`
//! columns whose values are stored. Column 0 of every row is the row itself.
//!
//! - CHORD: offsets `0, 1, 2, 4, …, 2^(K-2)`, the same for every factor.
//! - CDIL: offsets `0, +1·d, …, +h·d, -1·d, …, -h·d` with `h = (K-1)/2` and
//!   dilation `d = 2^(m-1)` for factor `m = 1..M`.
//!
//! All offsets are taken mod `N`.

mod circulant;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use circulant::{circulant_rank, poly_gcd, Poly};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProtocolKind {
    Chord,
    Cdil,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Chord => "CHORD",
            ProtocolKind::Cdil => "CDIL",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chord" => Ok(ProtocolKind::Chord),
            "cdil" => Ok(ProtocolKind::Cdil),
            other => Err(Error::InvalidProtocol(format!("unknown protocol {other:?}"))),
        }
    }
}

/// `ceil(log2 n)` for `n ≥ 1`.
pub fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize
}

/// Protocol kind with sequence length `n`, row width `k` and factor count `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub n: usize,
    pub k: usize,
    pub m: usize,
}

impl ProtocolSpec {
    /// Validated spec; missing `k`/`m` take the protocol defaults
    /// (`M = ceil(log2 N)`, CHORD `K = ceil(log2 N) + 1`, CDIL `K = 3`).
    pub fn new(kind: ProtocolKind, n: usize, k: Option<usize>, m: Option<usize>) -> Result<Self> {
        let lg = ceil_log2(n);
        let k = k.unwrap_or(match kind {
            ProtocolKind::Chord => lg + 1,
            ProtocolKind::Cdil => 3,
        });
        let spec = Self { kind, n, k, m: m.unwrap_or(lg) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_defaults(kind: ProtocolKind, n: usize) -> Result<Self> {
        Self::new(kind, n, None, None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidProtocol(format!("N must be at least 2, got {}", self.n)));
        }
        if self.m < 1 {
            return Err(Error::InvalidProtocol("M must be at least 1".into()));
        }
        match self.kind {
            ProtocolKind::Chord if self.k < 2 => {
                Err(Error::InvalidProtocol(format!("CHORD needs K >= 2, got {}", self.k)))
            }
            ProtocolKind::Cdil if self.k < 3 || self.k % 2 == 0 => {
                Err(Error::InvalidProtocol(format!("CDIL needs odd K >= 3, got {}", self.k)))
            }
            _ => Ok(()),
        }
    }

    /// Conditions that are legal but produce repeated columns within a row.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == ProtocolKind::Chord && self.k >= 2 && (self.k - 2 >= 64 || 1u128 << (self.k - 2) >= self.n as u128) {
            out.push(format!(
                "CHORD offset 2^{} reaches N = {}; rows contain repeated columns",
                self.k - 2,
                self.n
            ));
        }
        if self.kind == ProtocolKind::Cdil {
            for m in 1..=self.m {
                if has_repeats(&cdil_offsets(self, m)) {
                    out.push(format!("CDIL factor {m}: offsets collide mod N = {}; rows contain repeated columns", self.n));
                }
            }
        }
        out
    }

    /// Per-row offsets of factor `m` (1-based), in stored order.
    pub fn offsets(&self, m: usize) -> Vec<usize> {
        match self.kind {
            ProtocolKind::Chord => chord_offsets(self),
            ProtocolKind::Cdil => cdil_offsets(self, m),
        }
    }
}

fn has_repeats(offsets: &[usize]) -> bool {
    offsets.iter().enumerate().any(|(i, o)| offsets[..i].contains(o))
}

fn pow2_mod(e: usize, n: usize) -> usize {
    let mut v = 1 % n;
    for _ in 0..e {
        v = (v * 2) % n;
    }
    v
}

fn chord_offsets(spec: &ProtocolSpec) -> Vec<usize> {
    std::iter::once(0).chain((2..=spec.k).map(|k| pow2_mod(k - 2, spec.n))).collect()
}

fn cdil_offsets(spec: &ProtocolSpec, m: usize) -> Vec<usize> {
    let n = spec.n;
    let dilation = pow2_mod(m - 1, n);
    let half = (spec.k - 1) / 2;
    let forward = (1..=half).map(|p| (p % n) * dilation % n);
    let backward = (1..=half).map(|p| (n - (p % n) * dilation % n) % n);
    std::iter::once(0).chain(forward).chain(backward).collect()
}

fn check_row(i: usize, spec: &ProtocolSpec) -> Result<()> {
    if i >= spec.n {
        return Err(Error::IndexOutOfRange { index: i, len: spec.n });
    }
    Ok(())
}

/// Columns of row `i` under CHORD: `[i, i+1, i+2, i+4, …, i+2^(K-2)] mod N`.
pub fn chord_columns(i: usize, spec: &ProtocolSpec) -> Result<Vec<usize>> {
    if spec.kind != ProtocolKind::Chord {
        return Err(Error::InvalidProtocol("chord_columns on a CDIL spec".into()));
    }
    spec.validate()?;
    check_row(i, spec)?;
    Ok(chord_offsets(spec).into_iter().map(|o| (i + o) % spec.n).collect())
}

/// Columns of row `i` in factor `m` (1-based) under CDIL.
pub fn cdil_columns(i: usize, m: usize, spec: &ProtocolSpec) -> Result<Vec<usize>> {
    if spec.kind != ProtocolKind::Cdil {
        return Err(Error::InvalidProtocol("cdil_columns on a CHORD spec".into()));
    }
    spec.validate()?;
    check_row(i, spec)?;
    if m == 0 || m > spec.m {
        return Err(Error::InvalidProtocol(format!("factor index {m} outside 1..={}", spec.m)));
    }
    Ok(cdil_offsets(spec, m).into_iter().map(|o| (i + o) % spec.n).collect())
}

/// Column indices for every factor, row and slot. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseLayout {
    spec: ProtocolSpec,
    /// `M × N × K`, factor-major.
    columns: Vec<usize>,
}

/// Builds the full column table for `spec`.
pub fn build_layout(spec: &ProtocolSpec) -> Result<SparseLayout> {
    spec.validate()?;
    for w in spec.warnings() {
        log::warn!("{w}");
    }
    let (n, k, m) = (spec.n, spec.k, spec.m);
    let mut columns = Vec::with_capacity(m * n * k);
    for factor in 1..=m {
        for i in 0..n {
            let row = match spec.kind {
                ProtocolKind::Chord => chord_columns(i, spec)?,
                ProtocolKind::Cdil => cdil_columns(i, factor, spec)?,
            };
            columns.extend(row);
        }
    }
    Ok(SparseLayout { spec: *spec, columns })
}

impl SparseLayout {
    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    /// Column table of factor `m` (0-based), `N·K` entries row by row.
    pub fn factor(&self, m: usize) -> &[usize] {
        let size = self.spec.n * self.spec.k;
        &self.columns[m * size..(m + 1) * size]
    }

    /// Columns of row `i` in factor `m` (both 0-based).
    pub fn row(&self, m: usize, i: usize) -> &[usize] {
        let k = self.spec.k;
        &self.factor(m)[i * k..(i + 1) * k]
    }

    /// Number of stored column entries actually allocated.
    pub fn allocated_entries(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Whether every factor is shift-invariant: row `i` equals row 0 shifted by `i`.
    pub fn is_circulant(&self) -> bool {
        let (n, k) = (self.spec.n, self.spec.k);
        (0..self.spec.m).all(|m| {
            let base = self.row(m, 0);
            (0..n).all(|i| (0..k).all(|t| self.row(m, i)[t] == (base[t] + i) % n))
        })
    }

    /// Text export: a JSON header line `{kind, N, K, M}`, then one
    /// `m,i,k,column` line per stored entry (0-based, m-major, then i, then k).
    pub fn export_text(&self) -> String {
        use std::fmt::Write;
        let header = serde_json::json!({
            "kind": self.spec.kind,
            "N": self.spec.n,
            "K": self.spec.k,
            "M": self.spec.m,
        });
        let mut out = format!("{header}\n");
        for m in 0..self.spec.m {
            for i in 0..self.spec.n {
                for (t, c) in self.row(m, i).iter().enumerate() {
                    writeln!(out, "{m},{i},{t},{c}").expect("writing to String");
                }
            }
        }
        out
    }
}

/// Number of stored entries, `M·N·K`.
pub fn stored_entries(spec: &ProtocolSpec) -> usize {
    spec.m * spec.n * spec.k
}

/// Whether the product `W1 · W2 · … · WM` of the layout's support patterns
/// has no zero entry, i.e. every position reaches every other.
pub fn reachability_complete(layout: &SparseLayout) -> bool {
    let n = layout.n();
    if layout.is_circulant() {
        // support of a product of circulants is circulant: row 0 decides
        return reachable_from(layout, 0).iter().all(|&b| b);
    }
    let words = n.div_ceil(64);
    let mut reach = vec![0u64; n * words];
    for i in 0..n {
        reach[i * words + i / 64] |= 1 << (i % 64);
    }
    for m in 0..layout.m() {
        let mut next = vec![0u64; n * words];
        for i in 0..n {
            for j in 0..n {
                if reach[i * words + j / 64] >> (j % 64) & 1 == 1 {
                    for &c in layout.row(m, j) {
                        next[i * words + c / 64] |= 1 << (c % 64);
                    }
                }
            }
        }
        reach = next;
    }
    (0..n).all(|i| (0..n).all(|j| reach[i * words + j / 64] >> (j % 64) & 1 == 1))
}

/// Positions reached from `start` after applying factors 1..M in order.
pub fn reachable_from(layout: &SparseLayout, start: usize) -> Vec<bool> {
    let n = layout.n();
    let mut frontier = vec![false; n];
    frontier[start] = true;
    for m in 0..layout.m() {
        let mut next = vec![false; n];
        for (j, _) in frontier.iter().enumerate().filter(|(_, &r)| r) {
            for &c in layout.row(m, j) {
                next[c] = true;
            }
        }
        frontier = next;
    }
    frontier
}
