//! Banding and tapering weights, doubly banded/tapered masking of a `pq×pq`
//! covariance, and the single-bandwidth baselines that band or taper the
//! full vectorized covariance.
//!
//! Doubly masked entry `((l1,l2),(m1,m2))` is the source entry times
//! `w_{k1}(|l1-m1|) * w_{k2}(|l2-m2|)`, i.e. a Hadamard product with
//! `W_{k2}(1_q) ⊗ W_{k1}(1_p)`.

use serde::{Deserialize, Serialize};

use crate::covariance::CovEstimate;
use crate::error::{Error, Result};
use crate::matrix::{DenseSymMatrix, Mat, SymOperator};

/// Largest `pq` for which [`MaskedCovariance::to_dense`] will materialize.
pub const DENSE_MATERIALIZE_MAX_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Band,
    Taper,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Band => "band",
            MaskKind::Taper => "taper",
        }
    }

    /// Largest admissible bandwidth for a `dim×dim` factor.
    pub fn max_k(self, dim: usize) -> usize {
        match self {
            MaskKind::Band => dim.saturating_sub(1),
            MaskKind::Taper => 2 * dim,
        }
    }

    /// Weight at lag `dist`.
    pub fn weight(self, k: usize, dist: usize) -> f64 {
        match self {
            MaskKind::Band => {
                if dist <= k {
                    1.0
                } else {
                    0.0
                }
            }
            MaskKind::Taper => taper_at(k, dist),
        }
    }

    pub fn check_k(self, k: usize, dim: usize, name: &'static str) -> Result<()> {
        let max = self.max_k(dim);
        if k > max {
            return Err(Error::param(
                name,
                format!("{} bandwidth {k} outside [0, {max}] for dimension {dim}", self.name()),
            ));
        }
        Ok(())
    }
}

impl std::str::FromStr for MaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "band" | "banded" => Ok(MaskKind::Band),
            "taper" | "tapering" => Ok(MaskKind::Taper),
            other => Err(format!("unknown mask `{other}` (expected band or taper)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMode {
    pub kind: MaskKind,
    pub k: usize,
}

/// `I(|l - m| <= k)`.
pub fn band_weight(k: usize, l: usize, m: usize) -> f64 {
    MaskKind::Band.weight(k, l.abs_diff(m))
}

/// Tapering weight: 1 for `|l-m| <= ⌊k/2⌋`, `2 - |l-m|/⌊k/2⌋` up to `k`, 0 beyond.
/// For `k < 2` only the diagonal survives. Odd `k` would give a negative
/// weight at lag `k`; weights are clipped at 0 so `T_{2h+1} = T_{2h}`.
pub fn taper_weight(k: usize, l: usize, m: usize) -> f64 {
    taper_at(k, l.abs_diff(m))
}

fn taper_at(k: usize, dist: usize) -> f64 {
    let half = k / 2;
    if dist <= half {
        1.0
    } else if dist <= k {
        (2.0 - dist as f64 / half as f64).max(0.0)
    } else {
        0.0
    }
}

/// Dense `d×d` weight matrix `W_k(1_d)`.
pub fn weight_matrix(kind: MaskKind, k: usize, d: usize) -> Mat {
    Mat::from_fn(d, d, |l, m| kind.weight(k, l.abs_diff(m)))
}

/// Stored half-width: entries with lag beyond this are structurally absent.
fn reach(k: usize, dim: usize) -> usize {
    k.min(dim.saturating_sub(1))
}

/// A `pq×pq` covariance masked by `W_{k2}(1_q) ⊗ W_{k1}(1_p)`.
///
/// Stored block-banded: an outer band over column blocks `(l2, m2)` with
/// `|l2-m2| <= min(k2, q-1)`, and inside each block an inner band over
/// `(l1, m1)` with `|l1-m1| <= min(k1, p-1)`, both in diagonal storage.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCovariance {
    p: usize,
    q: usize,
    k1: usize,
    k2: usize,
    kind: MaskKind,
    r1: usize,
    r2: usize,
    values: Vec<f64>,
}

impl MaskedCovariance {
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn k1(&self) -> usize {
        self.k1
    }
    pub fn k2(&self) -> usize {
        self.k2
    }
    pub fn kind(&self) -> MaskKind {
        self.kind
    }
    /// Stored half-widths `(inner, outer)`.
    pub fn reach(&self) -> (usize, usize) {
        (self.r1, self.r2)
    }

    fn inner_width(&self) -> usize {
        2 * self.r1 + 1
    }

    fn block_len(&self) -> usize {
        self.p * self.inner_width()
    }

    /// Offset of block `(l2, m2)`; `None` outside the outer band.
    fn block_offset(&self, l2: usize, m2: usize) -> Option<usize> {
        if l2.abs_diff(m2) > self.r2 {
            return None;
        }
        let o2 = l2 + self.r2 - m2;
        Some((m2 * (2 * self.r2 + 1) + o2) * self.block_len())
    }

    fn inner_index(&self, l1: usize, m1: usize) -> Option<usize> {
        if l1.abs_diff(m1) > self.r1 {
            return None;
        }
        Some(m1 * self.inner_width() + l1 + self.r1 - m1)
    }

    /// Entry at 0-based `(row, col)` of the `pq×pq` matrix.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (l1, l2) = (row % self.p, row / self.p);
        let (m1, m2) = (col % self.p, col / self.p);
        self.entry(l1, m1, l2, m2)
    }

    /// Entry `((l1,l2),(m1,m2))` using 0-based factor indices.
    pub fn entry(&self, l1: usize, m1: usize, l2: usize, m2: usize) -> f64 {
        match (self.block_offset(l2, m2), self.inner_index(l1, m1)) {
            (Some(b), Some(i)) => self.values[b + i],
            _ => 0.0,
        }
    }

    /// Calls `f(l1, m1, l2, m2, value)` for every structurally present entry.
    pub fn for_each_stored(&self, mut f: impl FnMut(usize, usize, usize, usize, f64)) {
        let (p, q) = (self.p, self.q);
        for m2 in 0..q {
            for l2 in m2.saturating_sub(self.r2)..=(m2 + self.r2).min(q - 1) {
                let b = self.block_offset(l2, m2).expect("in band");
                for m1 in 0..p {
                    for l1 in m1.saturating_sub(self.r1)..=(m1 + self.r1).min(p - 1) {
                        let i = self.inner_index(l1, m1).expect("in band");
                        f(l1, m1, l2, m2, self.values[b + i]);
                    }
                }
            }
        }
    }

    /// Number of structurally present entries.
    pub fn nnz(&self) -> usize {
        band_count(self.p, self.r1) * band_count(self.q, self.r2)
    }

    pub fn to_dense(&self) -> Result<DenseSymMatrix> {
        let d = self.p * self.q;
        if d > DENSE_MATERIALIZE_MAX_DIM {
            return Err(Error::dim(format!(
                "refusing to materialize a {d}x{d} matrix (limit {DENSE_MATERIALIZE_MAX_DIM})"
            )));
        }
        let mut m = Mat::zeros(d, d);
        let p = self.p;
        self.for_each_stored(|l1, m1, l2, m2, v| m[(l2 * p + l1, m2 * p + m1)] = v);
        DenseSymMatrix::new(m)
    }

    /// Frobenius norm of the stored matrix.
    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn band_count(d: usize, r: usize) -> usize {
    // entries of a d×d matrix within lag r
    let r = r.min(d.saturating_sub(1));
    d * (2 * r + 1) - r * (r + 1)
}

impl SymOperator for MaskedCovariance {
    fn dim(&self) -> usize {
        self.p * self.q
    }

    fn column(&self, c: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let p = self.p;
        let (m1, m2) = (c % p, c / p);
        for l2 in m2.saturating_sub(self.r2)..=(m2 + self.r2).min(self.q - 1) {
            for l1 in m1.saturating_sub(self.r1)..=(m1 + self.r1).min(p - 1) {
                out[l2 * p + l1] = self.entry(l1, m1, l2, m2);
            }
        }
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let p = self.p;
        self.for_each_stored(|l1, m1, l2, m2, v| y[l2 * p + l1] += v * x[m2 * p + m1]);
    }
}

/// Doubly masks `cov` (dimension `pq`, with `(p, q)` carried by the estimate).
pub fn mask_separable(cov: &CovEstimate, k1: usize, k2: usize, kind: MaskKind) -> Result<MaskedCovariance> {
    mask_dense(cov.matrix.matrix(), cov.p, cov.q, k1, k2, kind)
}

/// Doubly masks an explicit `pq×pq` matrix.
pub fn mask_dense(m: &Mat, p: usize, q: usize, k1: usize, k2: usize, kind: MaskKind) -> Result<MaskedCovariance> {
    let d = p * q;
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::dim(format!(
            "covariance is {}x{}, expected {d}x{d} for p={p}, q={q}",
            m.nrows(),
            m.ncols()
        )));
    }
    kind.check_k(k1, p, "k1")?;
    kind.check_k(k2, q, "k2")?;
    let (r1, r2) = (reach(k1, p), reach(k2, q));
    let w1: Vec<f64> = (0..=r1).map(|lag| kind.weight(k1, lag)).collect();
    let w2: Vec<f64> = (0..=r2).map(|lag| kind.weight(k2, lag)).collect();
    let block_len = p * (2 * r1 + 1);
    let mut out = MaskedCovariance {
        p,
        q,
        k1,
        k2,
        kind,
        r1,
        r2,
        values: vec![0.0; q * (2 * r2 + 1) * block_len],
    };
    for m2 in 0..q {
        for l2 in m2.saturating_sub(r2)..=(m2 + r2).min(q - 1) {
            let b = out.block_offset(l2, m2).expect("in band");
            let wo = w2[l2.abs_diff(m2)];
            for m1 in 0..p {
                let col = m.column(m2 * p + m1);
                for l1 in m1.saturating_sub(r1)..=(m1 + r1).min(p - 1) {
                    let i = out.inner_index(l1, m1).expect("in band");
                    out.values[b + i] = col[l2 * p + l1] * wo * w1[l1.abs_diff(m1)];
                }
            }
        }
    }
    Ok(out)
}

/// Bands or tapers the full `pq×pq` covariance with a single bandwidth over
/// the vectorized index.
pub fn baseline_regularize(cov: &CovEstimate, k: usize, kind: MaskKind) -> Result<DenseSymMatrix> {
    baseline_dense(cov.matrix.matrix(), k, kind)
}

pub fn baseline_dense(m: &Mat, k: usize, kind: MaskKind) -> Result<DenseSymMatrix> {
    let d = m.nrows();
    kind.check_k(k, d, "k")?;
    DenseSymMatrix::new(Mat::from_fn(d, d, |i, j| m[(i, j)] * kind.weight(k, i.abs_diff(j))))
}
