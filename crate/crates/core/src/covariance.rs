//! Sample covariances (divisor `n`), entrywise truncation and the centering
//! transform used before robust estimation.
//!
//! All covariances here divide by `n`, not `n - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseSymMatrix, Mat, MatrixDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovKind {
    /// Centered sample covariance.
    Sample,
    /// `(1/n) Σ v_i v_iᵀ`.
    Uncentered,
    /// Uncentered Gram covariance of the data truncated at `tau`.
    RobustTruncated { tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub matrix: DenseSymMatrix,
    pub centered: bool,
    pub kind: CovKind,
    /// Row dimension of the underlying samples.
    pub p: usize,
    /// Column dimension of the underlying samples.
    pub q: usize,
}

impl CovEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn sample_mean(ds: &MatrixDataset) -> Mat {
    let mut acc = vec![0.0; ds.dim()];
    for i in 0..ds.n() {
        for (a, x) in acc.iter_mut().zip(ds.sample_vec(i)) {
            *a += x;
        }
    }
    let n = ds.n() as f64;
    Mat::from_iterator(ds.p(), ds.q(), acc.into_iter().map(|a| a / n))
}

pub fn sample_cov(ds: &MatrixDataset, centered: bool) -> Result<CovEstimate> {
    let n = ds.n();
    if centered && n < 2 {
        return Err(Error::param("n", "a centered covariance needs at least 2 samples"));
    }
    let mut v = ds.vec_columns();
    if centered {
        let mean = sample_mean(ds);
        for mut col in v.column_iter_mut() {
            col.iter_mut().zip(mean.iter()).for_each(|(x, m)| *x -= m);
        }
    }
    Ok(CovEstimate {
        matrix: gram(&v, n)?,
        centered,
        kind: if centered { CovKind::Sample } else { CovKind::Uncentered },
        p: ds.p(),
        q: ds.q(),
    })
}

/// `(1/n) V Vᵀ` for the `d×n` matrix of columns `V`.
fn gram(v: &Mat, n: usize) -> Result<DenseSymMatrix> {
    let g = v * v.transpose() / n as f64;
    DenseSymMatrix::new(g)
}

/// Entrywise `sgn(x) * min(|x|, tau)`.
pub fn truncate_dataset(ds: &MatrixDataset, tau: f64) -> Result<MatrixDataset> {
    check_tau(tau)?;
    Ok(ds.map(|x| x.clamp(-tau, tau)))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    Ok(())
}

/// Uncentered Gram covariance of the truncated data. The caller is
/// responsible for the data having mean zero (see [`center_transform`]).
pub fn robust_cov(ds: &MatrixDataset, tau: f64) -> Result<CovEstimate> {
    let truncated = truncate_dataset(ds, tau)?;
    let mut est = sample_cov(&truncated, false)?;
    est.kind = CovKind::RobustTruncated { tau };
    Ok(est)
}

/// `X̃_i = n/(n-1) (X_i - X̄)`.
pub fn center_transform(ds: &MatrixDataset) -> Result<MatrixDataset> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::param("n", "centering needs at least 2 samples"));
    }
    let mean = sample_mean(ds);
    let factor = n as f64 / (n as f64 - 1.0);
    let d = ds.dim();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend(ds.sample_vec(i).iter().zip(mean.iter()).map(|(x, m)| factor * (x - m)));
    }
    MatrixDataset::new(ds.p(), ds.q(), data)
}

/// Nearest-rank percentiles of the pooled `|x|` over every entry of every
/// sample, deduplicated and sorted in descending order.
pub fn tau_candidates(ds: &MatrixDataset, percentiles: &[f64]) -> Result<Vec<f64>> {
    if percentiles.is_empty() {
        return Err(Error::param("percentiles", "list is empty"));
    }
    let mut pooled: Vec<f64> = ds.data().iter().map(|x| x.abs()).collect();
    pooled.sort_by(f64::total_cmp);
    let total = pooled.len();
    let mut out = Vec::with_capacity(percentiles.len());
    for &pct in percentiles {
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(Error::param("percentiles", format!("{pct} is outside (0, 100]")));
        }
        let rank = ((pct * total as f64) / 100.0).ceil() as usize;
        out.push(pooled[rank.clamp(1, total) - 1]);
    }
    out.sort_by(|a, b| b.total_cmp(a));
    out.dedup();
    Ok(out)
}

/// The rate-optimal truncation level `(log max(p,q) / n)^(-1/4)` with unit
/// constant. Only a reference value; practical selection goes through tuning.
pub fn theoretical_tau(n: usize, p: usize, q: usize) -> f64 {
    let m = p.max(q).max(2) as f64;
    (m.ln() / n as f64).powf(-0.25)
}
