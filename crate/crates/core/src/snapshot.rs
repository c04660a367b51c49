//! Per-tick similarity networks: a symmetric score matrix, the mask of
//! observed edges, and the neighborhoods they induce.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{self, SimilarityKind};
use crate::stream::WindowBank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SnapshotError {
    #[error("not ready: {complete} complete window(s), need at least 2")]
    NotReady { complete: usize },
    #[error("edge mask covers {mask} nodes but the data has {n}")]
    MaskSize { mask: usize, n: usize },
    #[error("invalid snapshot: {0}")]
    Invalid(String),
}

#[inline]
fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Symmetric boolean adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    n: usize,
    bits: Vec<bool>,
}

impl EdgeMask {
    pub fn complete(n: usize) -> Self {
        Self {
            n,
            bits: vec![true; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut mask = Self::empty(n);
        for (i, j) in edges {
            mask.set(i, j, true);
        }
        mask
    }

    /// Symmetrizes with logical AND; the diagonal is ignored.
    pub fn from_matrix(rows: &[Vec<bool>]) -> Result<Self, SnapshotError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(SnapshotError::Invalid("mask must be square".into()));
        }
        let mut mask = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                mask.set(i, j, rows[i][j] && rows[j][i]);
            }
        }
        Ok(mask)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => false,
            std::cmp::Ordering::Less => self.bits[tri_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.bits[tri_index(self.n, j, i)],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        if i == j {
            return;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let k = tri_index(self.n, a, b);
        self.bits[k] = on;
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub node: usize,
    pub members: Vec<usize>,
}

impl Neighborhood {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// Similarity network at one tick. Masked-out entries hold a NaN sentinel
/// and must never be read; [`SimilaritySnapshot::y`] asserts this in debug
/// builds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySnapshot {
    pub t: u64,
    n: usize,
    values: Vec<f64>,
    mask: EdgeMask,
    pub degenerate: BTreeSet<usize>,
}

impl SimilaritySnapshot {
    /// Builds a snapshot from an upper-triangular value function. `value` is
    /// only called for masked-in pairs `i < j`.
    pub fn from_fn(t: u64, mask: EdgeMask, mut value: impl FnMut(usize, usize) -> f64) -> Self {
        let n = mask.n();
        let mut values = vec![f64::NAN; mask.bits.len()];
        for i in 0..n {
            for j in i + 1..n {
                if mask.get(i, j) {
                    values[tri_index(n, i, j)] = value(i, j);
                }
            }
        }
        Self {
            t,
            n,
            values,
            mask,
            degenerate: BTreeSet::new(),
        }
    }

    /// Dense constructor; `None` entries are masked out. Entries must be
    /// symmetric.
    pub fn from_dense(t: u64, rows: &[Vec<Option<f64>>]) -> Result<Self, SnapshotError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(SnapshotError::Invalid("matrix must be square".into()));
        }
        let mut mask = EdgeMask::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                match (rows[i][j], rows[j][i]) {
                    (Some(a), Some(b)) if a == b && a.is_finite() => mask.set(i, j, true),
                    (None, None) => {}
                    _ => {
                        return Err(SnapshotError::Invalid(format!(
                            "entries ({i},{j}) and ({j},{i}) are not symmetric finite values"
                        )))
                    }
                }
            }
        }
        Ok(Self::from_fn(t, mask, |i, j| rows[i][j].unwrap()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mask(&self) -> &EdgeMask {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.is_observed(i, j).then(|| self.y(i, j))
    }

    /// Observed similarity; calling this on a masked-out pair is a logic error.
    #[inline]
    pub fn y(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.mask.get(i, j), "read of masked-out edge ({i},{j})");
        let k = if i < j {
            tri_index(self.n, i, j)
        } else {
            tri_index(self.n, j, i)
        };
        self.values[k]
    }

    pub fn neighborhood(&self, i: usize) -> Neighborhood {
        Neighborhood {
            node: i,
            members: (0..self.n).filter(|&j| self.mask.get(i, j)).collect(),
        }
    }

    /// Zero-diagonal dense matrix with masked-out entries set to 0.
    pub fn dense_zero_filled(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).unwrap_or(0.0)).collect())
            .collect()
    }

    pub fn to_json(&self) -> SnapshotJson {
        SnapshotJson {
            t: self.t,
            n: self.n,
            y: (0..self.n)
                .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
                .collect(),
            degenerate: self.degenerate.iter().copied().collect(),
        }
    }

    pub fn from_json(doc: &SnapshotJson) -> Result<Self, SnapshotError> {
        if doc.y.len() != doc.n {
            return Err(SnapshotError::Invalid(format!(
                "n = {} but y has {} rows",
                doc.n,
                doc.y.len()
            )));
        }
        let mut snap = Self::from_dense(doc.t, &doc.y)?;
        snap.degenerate = doc.degenerate.iter().copied().collect();
        Ok(snap)
    }
}

/// Exported snapshot: `y` is row-major with `null` for the diagonal and
/// masked-out pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotJson {
    pub t: u64,
    pub n: usize,
    pub y: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub degenerate: Vec<usize>,
}

/// Similarity network over the bank's current windows. Pairs where either
/// window is incomplete, or the optional mask is off, are masked out.
/// Zero-variance windows score 0 against every neighbor under Pearson.
pub fn build_snapshot(
    bank: &WindowBank,
    kind: SimilarityKind,
    edge_mask: Option<&EdgeMask>,
) -> Result<SimilaritySnapshot, SnapshotError> {
    let n = bank.n();
    let w = bank.w();
    if let Some(m) = edge_mask {
        if m.n() != n {
            return Err(SnapshotError::MaskSize { mask: m.n(), n });
        }
    }
    let complete = bank.complete_count();
    let t = match bank.current_t() {
        Some(t) if complete >= 2 => t,
        _ => return Err(SnapshotError::NotReady { complete }),
    };

    let mut windows = vec![0.0; n * w];
    let mut ready = vec![false; n];
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        let slot = &mut windows[i * w..(i + 1) * w];
        ready[i] = bank.window_into(i, slot).expect("index in range");
        if ready[i] && kind == SimilarityKind::Pearson {
            match similarity::standardize_in_place(slot) {
                Ok(true) => {
                    degenerate.insert(i);
                }
                Ok(false) => {}
                Err(_) => return Err(SnapshotError::Invalid(format!("window length {w} < 2"))),
            }
        }
    }

    let mut mask = edge_mask.cloned().unwrap_or_else(|| EdgeMask::complete(n));
    for i in 0..n {
        for j in i + 1..n {
            if !(ready[i] && ready[j]) {
                mask.set(i, j, false);
            }
        }
    }
    let win = |i: usize| &windows[i * w..(i + 1) * w];
    let mut snap = SimilaritySnapshot::from_fn(t, mask, |i, j| match kind {
        SimilarityKind::Pearson => similarity::clamp_unit(similarity::dot(win(i), win(j))),
        _ => similarity::measure(kind, win(i), win(j)).expect("equal window lengths"),
    });
    snap.degenerate = degenerate;
    Ok(snap)
}
