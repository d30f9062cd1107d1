//! Core matrix types, vectorization and matrix norms.
//!
//! Indices in the docs are 1-based to match the usual statistical notation;
//! storage is 0-based. The single conversion rule: the 1-based entry
//! `X[l1, l2]` of a `p×q` matrix lives at 0-based offset `(l2-1)*p + (l1-1)`
//! of `vec(X)`, i.e. columns are stacked (column-major).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Dimension at or below which spectral norms are computed by a dense
/// symmetric eigensolve instead of Lanczos.
pub const DENSE_EIGEN_MAX_DIM: usize = 512;

pub const DEFAULT_OP_TOL: f64 = 1e-8;
pub const DEFAULT_OP_MAX_ITER: usize = 10_000;

/// `n` real `p×q` samples stored sample-major, column-major within a sample,
/// so that sample `i` occupies `data[i*p*q..(i+1)*p*q]` and that slice is
/// exactly `vec(X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDataset {
    n: usize,
    p: usize,
    q: usize,
    data: Vec<f64>,
}

impl MatrixDataset {
    pub fn new(p: usize, q: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::dim(format!("sample shape {p}x{q} is empty")));
        }
        let d = p * q;
        if data.is_empty() || !data.len().is_multiple_of(d) {
            return Err(Error::dim(format!(
                "{} values do not form whole {p}x{q} samples",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { n: data.len() / d, p, q, data })
    }

    pub fn from_samples(samples: &[Mat]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::dim("dataset needs at least one sample"))?;
        let (p, q) = first.shape();
        let mut data = Vec::with_capacity(samples.len() * p * q);
        for (i, s) in samples.iter().enumerate() {
            if s.shape() != (p, q) {
                return Err(Error::dim(format!(
                    "sample {i} has shape {:?}, expected ({p}, {q})",
                    s.shape()
                )));
            }
            data.extend_from_slice(s.as_slice());
        }
        Self::new(p, q, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    /// `p*q`, the length of a vectorized sample.
    pub fn dim(&self) -> usize {
        self.p * self.q
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample_vec(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> Mat {
        Mat::from_column_slice(self.p, self.q, self.sample_vec(i))
    }

    /// The `pq × n` matrix whose columns are the vectorized samples.
    pub fn vec_columns(&self) -> Mat {
        Mat::from_column_slice(self.dim(), self.n, &self.data)
    }

    /// Sub-dataset of the given sample indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            if i >= self.n {
                return Err(Error::dim(format!("sample index {i} out of range (n={})", self.n)));
            }
            data.extend_from_slice(self.sample_vec(i));
        }
        Self::new(self.p, self.q, data)
    }

    /// Applies `f` to every entry. `f` must keep entries finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            p: self.p,
            q: self.q,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `vec(X)`: stacks the columns of `x`.
pub fn vec(x: &Mat) -> Vec<f64> {
    x.as_slice().to_vec()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], p: usize, q: usize) -> Result<Mat> {
    if v.len() != p * q {
        return Err(Error::dim(format!("cannot reshape {} values into {p}x{q}", v.len())));
    }
    Ok(Mat::from_column_slice(p, q, v))
}

/// Explicit symmetric matrix. Construction symmetrizes via `(A + Aᵀ)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSymMatrix(Mat);

impl DenseSymMatrix {
    pub fn new(a: Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
        }
        if let Some(pos) = a.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self(symmetrize(a)))
    }

    pub fn identity(d: usize) -> Self {
        Self(Mat::identity(d, d))
    }

    pub fn from_fn(d: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Mat::from_fn(d, d, f))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
    pub fn matrix(&self) -> &Mat {
        &self.0
    }
    pub fn into_inner(self) -> Mat {
        self.0
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }
}

pub(crate) fn symmetrize(mut a: Mat) -> Mat {
    let d = a.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    a
}

/// How the free scale of a Kronecker factorization was pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    /// `trace(sigma2) = q`.
    TraceQ,
    /// `‖sigma2‖_F = √q`, used when the trace is numerically zero.
    FrobeniusSqrtQ,
    /// Factors supplied as-is (e.g. ground truth).
    Unnormalized,
}

impl ScaleConvention {
    pub fn tag(self) -> &'static str {
        match self {
            ScaleConvention::TraceQ => "trace_q",
            ScaleConvention::FrobeniusSqrtQ => "frobenius_sqrt_q",
            ScaleConvention::Unnormalized => "unnormalized",
        }
    }
}

/// `sigma2 ⊗ sigma1` without materializing the `pq×pq` product.
///
/// Entry `((l2-1)p + l1, (m2-1)p + m1)` of the product is
/// `sigma2[l2, m2] * sigma1[l1, m1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableCovariance {
    pub sigma2: DenseSymMatrix,
    pub sigma1: DenseSymMatrix,
    pub convention: ScaleConvention,
}

impl SeparableCovariance {
    pub fn new(sigma2: DenseSymMatrix, sigma1: DenseSymMatrix) -> Self {
        Self { sigma2, sigma1, convention: ScaleConvention::Unnormalized }
    }

    pub fn p(&self) -> usize {
        self.sigma1.dim()
    }
    pub fn q(&self) -> usize {
        self.sigma2.dim()
    }

    /// Same product, factors rescaled to `(c*sigma2, sigma1/c)`.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            sigma2: self.sigma2.scaled(c),
            sigma1: self.sigma1.scaled(1.0 / c),
            convention: ScaleConvention::Unnormalized,
        }
    }

    pub fn to_dense(&self) -> DenseSymMatrix {
        DenseSymMatrix(self.sigma2.matrix().kronecker(self.sigma1.matrix()))
    }

    /// `‖sigma2 ⊗ sigma1‖_F`.
    pub fn frobenius(&self) -> f64 {
        self.sigma2.matrix().norm() * self.sigma1.matrix().norm()
    }
}

/// A symmetric `d×d` operator that can be read column by column and applied
/// to vectors. Lets norms of structured differences be evaluated without
/// forming the dense matrix.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;

    /// Writes column `c` into `out` (length `dim`).
    fn column(&self, c: usize, out: &mut [f64]);

    /// `y = A x`.
    fn matvec(&self, x: &[f64], y: &mut [f64]);
}

impl SymOperator for DenseSymMatrix {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn column(&self, c: usize, out: &mut [f64]) {
        out.copy_from_slice(self.0.column(c).as_slice());
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let d = self.dim();
        y.iter_mut().for_each(|v| *v = 0.0);
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            let col = &self.0.as_slice()[c * d..(c + 1) * d];
            for (yi, a) in y.iter_mut().zip(col) {
                *yi += a * xc;
            }
        }
    }
}

impl SymOperator for SeparableCovariance {
    fn dim(&self) -> usize {
        self.p() * self.q()
    }

    fn column(&self, c: usize, out: &mut [f64]) {
        let p = self.p();
        let (l1c, l2c) = (c % p, c / p);
        let s1 = self.sigma1.matrix().column(l1c);
        for (l2r, chunk) in out.chunks_mut(p).enumerate() {
            let a = self.sigma2.get(l2r, l2c);
            for (o, b) in chunk.iter_mut().zip(s1.iter()) {
                *o = a * b;
            }
        }
    }

    /// `(sigma2 ⊗ sigma1) vec(X) = vec(sigma1 X sigma2ᵀ)`.
    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let (p, q) = (self.p(), self.q());
        let xm = Mat::from_column_slice(p, q, x);
        let out = self.sigma1.matrix() * xm * self.sigma2.matrix().transpose();
        y.copy_from_slice(out.as_slice());
    }
}

/// `A - B` for two operators of equal dimension.
pub struct Difference<'a, A: ?Sized, B: ?Sized> {
    pub a: &'a A,
    pub b: &'a B,
}

impl<A: SymOperator + ?Sized, B: SymOperator + ?Sized> SymOperator for Difference<'_, A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn column(&self, c: usize, out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.a.column(c, out);
        self.b.column(c, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= t);
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; y.len()];
        self.a.matvec(x, y);
        self.b.matvec(x, &mut tmp);
        y.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= t);
    }
}

/// Which matrix norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Frobenius,
    /// Maximum absolute column sum.
    L1,
    /// Maximum absolute row sum.
    Linf,
    Max,
    /// Spectral norm (largest |eigenvalue| for symmetric input).
    Operator,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Frobenius => "frob",
            NormKind::L1 => "l1",
            NormKind::Linf => "linf",
            NormKind::Max => "max",
            NormKind::Operator => "op",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "frob" | "frobenius" | "f" => NormKind::Frobenius,
            "l1" | "1" => NormKind::L1,
            "linf" | "inf" => NormKind::Linf,
            "max" => NormKind::Max,
            "op" | "operator" | "2" | "l2" | "spectral" => NormKind::Operator,
            _ => return None,
        })
    }
}

pub fn norm_frobenius(a: &Mat) -> f64 {
    a.norm()
}

pub fn norm_l1(a: &Mat) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_linf(a: &Mat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_max(a: &Mat) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest |eigenvalue| of a symmetric matrix, to relative accuracy `tol`.
pub fn norm_operator(a: &Mat, tol: f64, max_iter: usize) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::dim("operator norm needs a square matrix"));
    }
    let scale = norm_max(a).max(f64::MIN_POSITIVE);
    let d = a.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::param("A", "operator norm requires a symmetric matrix"));
            }
        }
    }
    spectral_norm(&DenseSymMatrix(a.clone()), tol, max_iter)
}

/// Norm of any symmetric operator. Entrywise norms stream over columns;
/// the spectral norm uses a dense eigensolve for `dim <= 512`, Lanczos
/// otherwise.
pub fn operator_norm<O: SymOperator + ?Sized>(op: &O, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::Operator => spectral_norm(op, DEFAULT_OP_TOL, DEFAULT_OP_MAX_ITER),
        _ => Ok(streamed_norm(op, kind)),
    }
}

fn streamed_norm<O: SymOperator + ?Sized>(op: &O, kind: NormKind) -> f64 {
    let d = op.dim();
    let mut col = vec![0.0; d];
    match kind {
        NormKind::Frobenius => {
            let mut ss = 0.0;
            for c in 0..d {
                op.column(c, &mut col);
                ss += col.iter().map(|x| x * x).sum::<f64>();
            }
            ss.sqrt()
        }
        // symmetric: max row sum == max column sum
        NormKind::L1 | NormKind::Linf => {
            let mut best = 0.0f64;
            for c in 0..d {
                op.column(c, &mut col);
                best = best.max(col.iter().map(|x| x.abs()).sum::<f64>());
            }
            best
        }
        NormKind::Max => {
            let mut best = 0.0f64;
            for c in 0..d {
                op.column(c, &mut col);
                best = col.iter().fold(best, |m, x| m.max(x.abs()));
            }
            best
        }
        NormKind::Operator => unreachable!(),
    }
}

/// Largest |eigenvalue| of a symmetric operator.
pub fn spectral_norm<O: SymOperator + ?Sized>(op: &O, tol: f64, max_iter: usize) -> Result<f64> {
    let d = op.dim();
    if d == 0 {
        return Ok(0.0);
    }
    if d <= DENSE_EIGEN_MAX_DIM {
        let mut dense = Mat::zeros(d, d);
        let mut col = vec![0.0; d];
        for c in 0..d {
            op.column(c, &mut col);
            dense.column_mut(c).copy_from_slice(&col);
        }
        let eig = SymmetricEigen::new(symmetrize(dense));
        return Ok(eig.eigenvalues.iter().fold(0.0, |m, x| m.max(x.abs())));
    }
    lanczos_abs_max(op, tol, max_iter)
}

/// Lanczos with full reorthogonalization. Starts from the normalized all-ones
/// vector; on breakdown before the Krylov space is exhausted it continues
/// from a fixed deterministic perturbation vector orthogonalized against the
/// basis so far.
fn lanczos_abs_max<O: SymOperator + ?Sized>(op: &O, tol: f64, max_iter: usize) -> Result<f64> {
    let d = op.dim();
    let steps = max_iter.min(d).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    let mut qv = vec![1.0 / (d as f64).sqrt(); d];
    let mut w = vec![0.0; d];
    let mut gap = f64::INFINITY;
    let mut restarts = 0u64;

    for _ in 0..steps {
        op.matvec(&qv, &mut w);
        let a = dot(&qv, &w);
        for (wi, qi) in w.iter_mut().zip(&qv) {
            *wi -= a * qi;
        }
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            for (wi, pi) in w.iter_mut().zip(prev.iter()) {
                *wi -= b * pi;
            }
        }
        basis.push(std::mem::take(&mut qv));
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let h = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= h * bi;
                }
            }
        }
        let mut b = norm2(&w);

        let (theta, last) = tridiag_extreme(&alpha, &beta);
        let scale = theta.abs().max(f64::MIN_POSITIVE);
        gap = b * last.abs() / scale;
        if basis.len() == d {
            return Ok(theta.abs());
        }
        let breakdown = b <= 1e-13 * alpha.iter().fold(scale, |m, x| m.max(x.abs()));
        if !breakdown && theta != 0.0 && gap <= tol {
            return Ok(theta.abs());
        }
        if breakdown {
            // invariant subspace found; continue in its orthogonal complement
            restarts += 1;
            w = perturbation(d, restarts);
            for _ in 0..2 {
                for bv in &basis {
                    let h = dot(bv, &w);
                    for (wi, bi) in w.iter_mut().zip(bv) {
                        *wi -= h * bi;
                    }
                }
            }
            let nw = norm2(&w);
            if nw <= 1e-12 {
                return Ok(theta.abs());
            }
            w.iter_mut().for_each(|x| *x /= nw);
            b = 0.0;
            qv = std::mem::take(&mut w);
            w = vec![0.0; d];
        } else {
            qv = w.iter().map(|x| x / b).collect();
        }
        beta.push(b);
    }
    Err(Error::NonConvergence { iterations: steps, gap })
}

fn perturbation(d: usize, k: u64) -> Vec<f64> {
    (0..d)
        .map(|i| ((i as f64 + 1.0) * (0.618_033_988_75 + k as f64)).sin())
        .collect()
}

/// Eigenvalue of largest magnitude of the tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, and the last component of its unit
/// eigenvector.
fn tridiag_extreme(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (idx, theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv.abs() { (i, v) } else { (bi, bv) });
    (theta, eig.eigenvectors[(m - 1, idx)])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖S - D‖` for a separable `S` and a dense `D`, streaming over columns of
/// the difference (spectral norm via matrix-free products).
pub fn norm_diff_separable_vs_dense(
    s: &SeparableCovariance,
    d: &DenseSymMatrix,
    which: NormKind,
) -> Result<f64> {
    if s.dim() != d.dim() {
        return Err(Error::dim(format!(
            "separable dimension {} (p={}, q={}) vs dense {}",
            s.dim(),
            s.p(),
            s.q(),
            d.dim()
        )));
    }
    operator_norm(&Difference { a: s, b: d }, which)
}

/// `‖S - T‖` for two separable covariances of equal shape.
pub fn norm_diff_separable(
    s: &SeparableCovariance,
    t: &SeparableCovariance,
    which: NormKind,
) -> Result<f64> {
    if s.p() != t.p() || s.q() != t.q() {
        return Err(Error::dim("separable factors differ in shape"));
    }
    operator_norm(&Difference { a: s, b: t }, which)
}
