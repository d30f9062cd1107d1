//! Nearest Kronecker product of a `pq×pq` covariance.
//!
//! The rearrangement `ξ` maps `M` (with `p×p` blocks `A_{l2,m2}`) to the
//! `q²×p²` matrix whose row `(m2-1)q + l2` is `vec(A_{l2,m2})ᵀ`. It is a linear
//! isometry for the Frobenius norm and sends `B ⊗ C` to `vec(B) vec(C)ᵀ`, so
//! `‖M - B⊗C‖_F = ‖ξ(M) - vec(B)vec(C)ᵀ‖_F` and the best Kronecker
//! approximation comes from the leading singular triple of `ξ(M)`.
//!
//! A doubly masked input `M ∘ (W2 ⊗ W1)` rearranges to
//! `diag(vec W2) ξ(M) diag(vec W1)`, so masked views only touch the rows
//! `(l2,m2)` and columns `(l1,m1)` whose weights are structurally nonzero.

use nalgebra::SVD;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::CovEstimate;
use crate::error::{Error, Result};
use crate::matrix::{norm2, symmetrize, DenseSymMatrix, Mat, ScaleConvention, SeparableCovariance};
use crate::regularize::{mask_separable, MaskKind, MaskedCovariance};
use crate::rng;

/// Views with at most this many logical entries are materialized.
pub const MATERIALIZE_MAX_ENTRIES: usize = 1 << 26;
/// Largest side for the dense SVD fallback.
pub const DENSE_SVD_MAX_SIDE: usize = 1024;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// `ξ(M)` for an explicit `pq×pq` matrix.
pub fn rearrange_dense(m: &Mat, p: usize, q: usize) -> Result<Mat> {
    let d = p * q;
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::dim(format!(
            "matrix is {}x{}, not {d}x{d} for p={p}, q={q}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut xi = Mat::zeros(q * q, p * p);
    for m2 in 0..q {
        for m1 in 0..p {
            let col = m.column(m2 * p + m1);
            for l2 in 0..q {
                let row = m2 * q + l2;
                for l1 in 0..p {
                    xi[(row, m1 * p + l1)] = col[l2 * p + l1];
                }
            }
        }
    }
    Ok(xi)
}

/// Inverse of [`rearrange_dense`].
pub fn unrearrange(xi: &Mat, p: usize, q: usize) -> Result<Mat> {
    if xi.nrows() != q * q || xi.ncols() != p * p {
        return Err(Error::dim("rearranged matrix has the wrong shape"));
    }
    let d = p * q;
    Ok(Mat::from_fn(d, d, |r, c| {
        let (l1, l2) = (r % p, r / p);
        let (m1, m2) = (c % p, c / p);
        xi[(m2 * q + l2, m1 * p + l1)]
    }))
}

enum Repr<'a> {
    /// `mat` holds the rows `rows` and columns `cols` of `ξ`; everything
    /// else is zero. `None` means all rows (columns).
    Materialized { mat: Mat, rows: Option<Vec<usize>>, cols: Option<Vec<usize>> },
    Implicit(&'a MaskedCovariance),
}

/// `ξ(M)` as a logical `q²×p²` matrix, either materialized or applied
/// implicitly from block-banded storage.
pub struct RearrangedView<'a> {
    p: usize,
    q: usize,
    band: Option<(usize, usize)>,
    repr: Repr<'a>,
}

impl<'a> RearrangedView<'a> {
    pub fn from_dense(m: &Mat, p: usize, q: usize) -> Result<RearrangedView<'static>> {
        Ok(RearrangedView { p, q, band: None, repr: Repr::Materialized { mat: rearrange_dense(m, p, q)?, rows: None, cols: None } })
    }

    /// Materialized when `q²p²` fits [`MATERIALIZE_MAX_ENTRIES`], implicit otherwise.
    pub fn from_masked(m: &'a MaskedCovariance) -> Self {
        let (p, q) = (m.p(), m.q());
        if (p * p).saturating_mul(q * q) <= MATERIALIZE_MAX_ENTRIES {
            Self::materialize_masked(m)
        } else {
            Self::implicit(m)
        }
    }

    pub fn implicit(m: &'a MaskedCovariance) -> Self {
        RearrangedView { p: m.p(), q: m.q(), band: Some(m.reach()), repr: Repr::Implicit(m) }
    }

    pub fn materialize_masked(m: &MaskedCovariance) -> RearrangedView<'static> {
        let (p, q) = (m.p(), m.q());
        let (r1, r2) = m.reach();
        let rows = band_indices(q, r2);
        let cols = band_indices(p, r1);
        let row_pos = positions(&rows, q * q);
        let col_pos = positions(&cols, p * p);
        let mut mat = Mat::zeros(rows.len(), cols.len());
        m.for_each_stored(|l1, m1, l2, m2, v| {
            mat[(row_pos[m2 * q + l2], col_pos[m1 * p + l1])] = v;
        });
        RearrangedView { p, q, band: Some((r1, r2)), repr: Repr::Materialized { mat, rows: Some(rows), cols: Some(cols) } }
    }

    /// The view of `ξ(M ∘ (W_{k2} ⊗ W_{k1}))` built from an already
    /// rearranged `ξ(M)`, by scaling rows and columns.
    pub fn masked_from_rearranged(xi: &Mat, p: usize, q: usize, k1: usize, k2: usize, kind: MaskKind) -> Result<RearrangedView<'static>> {
        if xi.nrows() != q * q || xi.ncols() != p * p {
            return Err(Error::dim("rearranged matrix has the wrong shape"));
        }
        kind.check_k(k1, p, "k1")?;
        kind.check_k(k2, q, "k2")?;
        let (r1, r2) = (k1.min(p - 1), k2.min(q - 1));
        let rows = band_indices(q, r2);
        let cols = band_indices(p, r1);
        let w_row: Vec<f64> = rows.iter().map(|&r| kind.weight(k2, (r % q).abs_diff(r / q))).collect();
        let w_col: Vec<f64> = cols.iter().map(|&c| kind.weight(k1, (c % p).abs_diff(c / p))).collect();
        let mut mat = Mat::zeros(rows.len(), cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let src = xi.column(c);
            let wc = w_col[j];
            let mut dst = mat.column_mut(j);
            for (i, &r) in rows.iter().enumerate() {
                dst[i] = src[r] * w_row[i] * wc;
            }
        }
        Ok(RearrangedView { p, q, band: Some((r1, r2)), repr: Repr::Materialized { mat, rows: Some(rows), cols: Some(cols) } })
    }

    /// Logical shape `(q², p²)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.q * self.q, self.p * self.p)
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.repr, Repr::Materialized { .. })
    }

    pub fn frobenius(&self) -> f64 {
        match &self.repr {
            Repr::Materialized { mat, .. } => mat.norm(),
            Repr::Implicit(m) => m.frobenius(),
        }
    }

    /// The full `q²×p²` matrix.
    pub fn to_dense(&self) -> Mat {
        let (nr, nc) = self.shape();
        let mut out = Mat::zeros(nr, nc);
        match &self.repr {
            Repr::Materialized { mat, rows, cols } => {
                for j in 0..mat.ncols() {
                    let c = cols.as_ref().map_or(j, |v| v[j]);
                    for i in 0..mat.nrows() {
                        let r = rows.as_ref().map_or(i, |v| v[i]);
                        out[(r, c)] = mat[(i, j)];
                    }
                }
            }
            Repr::Implicit(m) => {
                let (p, q) = (self.p, self.q);
                m.for_each_stored(|l1, m1, l2, m2, v| out[(m2 * q + l2, m1 * p + l1)] = v);
            }
        }
        out
    }

    /// `ξ(M) v` over the full index space.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match &self.repr {
            Repr::Materialized { mat, rows, cols } => {
                let vs: Vec<f64> = match cols {
                    Some(c) => c.iter().map(|&i| v[i]).collect(),
                    None => v.to_vec(),
                };
                let y = mat * nalgebra::DVector::from_vec(vs);
                match rows {
                    Some(r) => r.iter().zip(y.iter()).for_each(|(&i, &x)| out[i] = x),
                    None => out.copy_from_slice(y.as_slice()),
                }
            }
            Repr::Implicit(m) => {
                let (p, q) = (self.p, self.q);
                m.for_each_stored(|l1, m1, l2, m2, val| out[m2 * q + l2] += val * v[m1 * p + l1]);
            }
        }
    }

    /// `ξ(M)ᵀ u` over the full index space.
    pub fn rmatvec(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match &self.repr {
            Repr::Materialized { mat, rows, cols } => {
                let us: Vec<f64> = match rows {
                    Some(r) => r.iter().map(|&i| u[i]).collect(),
                    None => u.to_vec(),
                };
                let y = mat.tr_mul(&nalgebra::DVector::from_vec(us));
                match cols {
                    Some(c) => c.iter().zip(y.iter()).for_each(|(&i, &x)| out[i] = x),
                    None => out.copy_from_slice(y.as_slice()),
                }
            }
            Repr::Implicit(m) => {
                let (p, q) = (self.p, self.q);
                m.for_each_stored(|l1, m1, l2, m2, val| out[m1 * p + l1] += val * u[m2 * q + l2]);
            }
        }
    }
}

/// Indices `(m)·d + l` of a `d×d` matrix with `|l - m| <= r`, ascending.
fn band_indices(d: usize, r: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for m in 0..d {
        for l in m.saturating_sub(r)..=(m + r).min(d - 1) {
            out.push(m * d + l);
        }
    }
    out
}

fn positions(idx: &[usize], len: usize) -> Vec<usize> {
    let mut pos = vec![usize::MAX; len];
    for (i, &k) in idx.iter().enumerate() {
        pos[k] = i;
    }
    pos
}

/// Leading singular triple of a rearranged matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Factor {
    pub sigma: f64,
    /// Unit vector of length `q²`.
    pub u: Vec<f64>,
    /// Unit vector of length `p²`.
    pub v: Vec<f64>,
    pub iterations: usize,
    /// `max(‖ξv - σu‖, ‖ξᵀu - σv‖) / σ` at exit.
    pub residual: f64,
}

/// Leading singular triple by alternating power iteration, started from
/// `vec(I_p)/√p`. On stagnation it restarts once from a fixed perturbation
/// of the start vector, then falls back to a dense SVD when the view is
/// materialized and both sides are at most [`DENSE_SVD_MAX_SIDE`]. The sign
/// is fixed so that `trace(unvec(u)) >= 0`.
pub fn leading_singular_triple(view: &RearrangedView<'_>, tol: f64, max_iter: usize) -> Result<Rank1Factor> {
    let (nr, nc) = view.shape();
    let p = view.p;
    let mut start = vec![0.0; nc];
    for l in 0..p {
        start[l * p + l] = 1.0 / (p as f64).sqrt();
    }
    let mut last_gap = f64::INFINITY;
    let mut total_iters = 0;
    for attempt in 0..2 {
        if attempt == 1 {
            perturb(&mut start, view.band, p);
        }
        match power_iterate(view, &start, tol, max_iter) {
            Ok(mut f) => {
                f.iterations += total_iters;
                fix_sign(&mut f, view.q);
                return Ok(f);
            }
            Err(Error::NonConvergence { iterations, gap }) => {
                total_iters += iterations;
                last_gap = gap;
            }
            Err(Error::ZeroInput) if attempt == 0 => {}
            Err(e) => return Err(e),
        }
    }
    if view.is_materialized() && nr <= DENSE_SVD_MAX_SIDE && nc <= DENSE_SVD_MAX_SIDE {
        let mut f = dense_triple(&view.to_dense())?;
        f.iterations = total_iters;
        fix_sign(&mut f, view.q);
        return Ok(f);
    }
    Err(Error::NonConvergence { iterations: total_iters, gap: last_gap })
}

fn power_iterate(view: &RearrangedView<'_>, start: &[f64], tol: f64, max_iter: usize) -> Result<Rank1Factor> {
    let (nr, nc) = view.shape();
    let mut v = start.to_vec();
    let nv = norm2(&v);
    if nv == 0.0 {
        return Err(Error::ZeroInput);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut u = vec![0.0; nr];
    let mut z = vec![0.0; nc];
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=max_iter {
        view.matvec(&v, &mut u);
        let s = norm2(&u);
        if s == 0.0 {
            return Err(Error::ZeroInput);
        }
        u.iter_mut().for_each(|x| *x /= s);
        view.rmatvec(&u, &mut z);
        let sigma = norm2(&z);
        // ξv = s u exactly, so ‖ξv - σu‖ = |s - σ|
        let r_left = (sigma - s).abs();
        let r_right = z.iter().zip(&v).map(|(a, b)| (a - sigma * b).powi(2)).sum::<f64>().sqrt();
        let gap = r_left.max(r_right) / sigma;
        if gap <= tol {
            return Ok(Rank1Factor { sigma, u, v, iterations: it, residual: gap });
        }
        if gap < 0.999 * best {
            best = gap;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 200 {
                return Err(Error::NonConvergence { iterations: it, gap });
            }
        }
        v.iter_mut().zip(&z).for_each(|(a, b)| *a = b / sigma);
    }
    Err(Error::NonConvergence { iterations: max_iter, gap: best })
}

/// Deterministic perturbation restricted to the stored band.
fn perturb(v: &mut [f64], band: Option<(usize, usize)>, p: usize) {
    let mut g = rng::seeded(0x5eed_cafe);
    let r1 = band.map_or(usize::MAX, |(r1, _)| r1);
    for (i, x) in v.iter_mut().enumerate() {
        let (l, m) = (i % p, i / p);
        if l.abs_diff(m) <= r1 {
            let e: f64 = g.sample(StandardNormal);
            *x += 0.5 * e / (p as f64).sqrt();
        }
    }
}

fn dense_triple(a: &Mat) -> Result<Rank1Factor> {
    let svd = SVD::new(a.clone(), true, true);
    let (idx, &sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, &0.0f64), |best, cur| if cur.1 > best.1 { cur } else { best });
    if sigma == 0.0 {
        return Err(Error::ZeroInput);
    }
    let u = svd.u.as_ref().expect("requested").column(idx).iter().copied().collect();
    let v = svd.v_t.as_ref().expect("requested").row(idx).iter().copied().collect();
    Ok(Rank1Factor { sigma, u, v, iterations: 0, residual: 0.0 })
}

fn fix_sign(f: &mut Rank1Factor, q: usize) {
    let trace: f64 = (0..q).map(|l| f.u[l * q + l]).sum();
    let flip = if trace != 0.0 {
        trace < 0.0
    } else {
        f.u.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        f.u.iter_mut().for_each(|x| *x = -*x);
        f.v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Result of a Kronecker factorization with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KronFit {
    pub cov: SeparableCovariance,
    pub factor: Rank1Factor,
    /// `sqrt(‖ξ(M)‖² - σ²)`, equal to `‖M - Σ2⊗Σ1‖_F` at the optimum.
    pub residual_frobenius: f64,
}

/// Best Kronecker approximation of a rearranged covariance, with the scale
/// pinned by `trace(Σ2) = q` (or `‖Σ2‖_F = √q` when the trace vanishes).
pub fn kron_fit_view(view: &RearrangedView<'_>, tol: f64) -> Result<KronFit> {
    let factor = leading_singular_triple(view, tol, DEFAULT_MAX_ITER)?;
    let (p, q) = (view.p, view.q);
    let b = Mat::from_iterator(q, q, factor.u.iter().map(|x| x * factor.sigma));
    let c = Mat::from_column_slice(p, p, &factor.v);
    let trace_b = b.trace();
    let (scale, convention) = if trace_b > 1e-12 {
        (q as f64 / trace_b, ScaleConvention::TraceQ)
    } else {
        ((q as f64).sqrt() / b.norm(), ScaleConvention::FrobeniusSqrtQ)
    };
    let mut sigma2 = symmetrize(b * scale);
    let mut sigma1 = symmetrize(c / scale);
    if let Some((r1, r2)) = view.band {
        zero_outside_band(&mut sigma1, r1);
        zero_outside_band(&mut sigma2, r2);
    }
    let fro = view.frobenius();
    let residual_frobenius = (fro * fro - factor.sigma * factor.sigma).max(0.0).sqrt();
    Ok(KronFit {
        cov: SeparableCovariance {
            sigma2: DenseSymMatrix::new(sigma2)?,
            sigma1: DenseSymMatrix::new(sigma1)?,
            convention,
        },
        factor,
        residual_frobenius,
    })
}

// Off-band singular-vector entries are exactly zero because the matching
// rows/columns of ξ are absent; this only guards the invariant.
fn zero_outside_band(m: &mut Mat, r: usize) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..d {
            if i.abs_diff(j) > r {
                debug_assert!(m[(i, j)].abs() <= 1e-12, "off-band entry {}", m[(i, j)]);
                m[(i, j)] = 0.0;
            }
        }
    }
}

/// Input to [`kron_factorize`].
pub enum KronSource<'a> {
    Dense { matrix: &'a Mat, p: usize, q: usize },
    Masked(&'a MaskedCovariance),
}

/// Nearest Kronecker product `Σ2 ⊗ Σ1` of a (possibly masked) covariance.
pub fn kron_factorize(source: KronSource<'_>, tol: f64) -> Result<SeparableCovariance> {
    kron_fit(source, tol).map(|f| f.cov)
}

pub fn kron_fit(source: KronSource<'_>, tol: f64) -> Result<KronFit> {
    match source {
        KronSource::Dense { matrix, p, q } => kron_fit_view(&RearrangedView::from_dense(matrix, p, q)?, tol),
        KronSource::Masked(m) => kron_fit_view(&RearrangedView::from_masked(m), tol),
    }
}

/// Objective values compared by [`band_equivalence_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `‖Σ̂ - Σ2⊗Σ1‖²_F` for the factors from the doubly banded NKP.
    pub nkp_objective: f64,
    /// Best objective of the direct banded alternating search.
    pub search_objective: f64,
    pub restarts: usize,
}

impl EquivalenceReport {
    pub fn nkp_no_worse(&self, slack: f64) -> bool {
        self.nkp_objective <= self.search_objective + slack
    }
}

/// Compares the doubly banded NKP against a direct minimization of
/// `‖Σ̂ - Σ2⊗Σ1‖²_F` over banded `Σ1 ∈ B_p(k1)`, `Σ2 ∈ B_q(k2)` by
/// alternating least squares from 20 random banded starts.
pub fn band_equivalence_check(cov: &CovEstimate, k1: usize, k2: usize, seed: u64) -> Result<EquivalenceReport> {
    const RESTARTS: usize = 20;
    let (p, q) = (cov.p, cov.q);
    let sigma = cov.matrix.matrix();
    let masked = mask_separable(cov, k1, k2, MaskKind::Band)?;
    let fit = kron_fit(KronSource::Masked(&masked), DEFAULT_TOL)?;
    let nkp_objective = kron_objective(sigma, fit.cov.sigma2.matrix(), fit.cov.sigma1.matrix());

    let mut g = rng::seeded(seed);
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let mut b = Mat::from_fn(q, q, |l, m| if l.abs_diff(m) <= k2 { g.sample(StandardNormal) } else { 0.0 });
        let mut prev = f64::INFINITY;
        for _ in 0..5000 {
            let c = banded_ls_update(sigma, &b, p, q, k1, true);
            b = banded_ls_update(sigma, &c, p, q, k2, false);
            let obj = kron_objective(sigma, &b, &c);
            if (prev - obj).abs() <= 1e-15 * prev.max(1e-300) {
                prev = obj;
                break;
            }
            prev = obj;
        }
        best = best.min(prev);
    }
    Ok(EquivalenceReport { nkp_objective, search_objective: best, restarts: RESTARTS })
}

/// Least-squares update of one banded factor with the other held fixed.
/// With `solve_inner`, returns the `p×p` factor `C` given `B`; otherwise the
/// `q×q` factor `B` given `C`.
fn banded_ls_update(sigma: &Mat, fixed: &Mat, p: usize, q: usize, k: usize, solve_inner: bool) -> Mat {
    let denom = fixed.norm_squared();
    let d = if solve_inner { p } else { q };
    if denom == 0.0 {
        return Mat::zeros(d, d);
    }
    Mat::from_fn(d, d, |a, b| {
        if a.abs_diff(b) > k {
            return 0.0;
        }
        let mut acc = 0.0;
        if solve_inner {
            for m2 in 0..q {
                for l2 in 0..q {
                    let w = fixed[(l2, m2)];
                    if w != 0.0 {
                        acc += w * sigma[(l2 * p + a, m2 * p + b)];
                    }
                }
            }
        } else {
            for m1 in 0..p {
                for l1 in 0..p {
                    let w = fixed[(l1, m1)];
                    if w != 0.0 {
                        acc += w * sigma[(a * p + l1, b * p + m1)];
                    }
                }
            }
        }
        acc / denom
    })
}

/// `‖Σ - B ⊗ C‖²_F` by direct summation.
pub fn kron_objective(sigma: &Mat, b: &Mat, c: &Mat) -> f64 {
    let p = c.nrows();
    let mut acc = 0.0;
    for col in 0..sigma.ncols() {
        let (m1, m2) = (col % p, col / p);
        for row in 0..sigma.nrows() {
            let (l1, l2) = (row % p, row / p);
            let e = sigma[(row, col)] - b[(l2, m2)] * c[(l1, m1)];
            acc += e * e;
        }
    }
    acc
}

/// `unvec(u)` for a square factor.
pub fn unvec_square(u: &[f64]) -> Result<Mat> {
    let d = (u.len() as f64).sqrt().round() as usize;
    if d * d != u.len() {
        return Err(Error::dim(format!("{} is not a perfect square", u.len())));
    }
    Ok(Mat::from_column_slice(d, d, u))
}
