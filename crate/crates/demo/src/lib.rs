//! Browser demo: mask weights, simulate-and-fit, and a tuning score grid.
//! Every export returns a JSON string for the page to parse.

use kronband::matrix::{norm_diff_separable, Mat, NormKind};
use kronband::regularize::{weight_matrix, MaskKind};
use kronband::simulate::{CovKind, SimConfig};
use kronband::tuning::{self, CovOptions, Estimate, EstimatorKind, TuningConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest `p` or `q` the page accepts; keeps a fit under a second.
pub const MAX_SIDE: usize = 40;

fn rows(m: &Mat) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn sim(n: usize, p: usize, q: usize, model: &str, rho: f64, seed: u64) -> Result<SimConfig, String> {
    if p > MAX_SIDE || q > MAX_SIDE {
        return Err(format!("p and q are limited to {MAX_SIDE} in the demo"));
    }
    let kind: CovKind = model.parse()?;
    let cfg = SimConfig::new(n, p, q, kind, rho, rho).with_seed(seed);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// `d×d` weight matrix of a band or taper mask.
pub fn mask_weights_json(kind: &str, k: usize, d: usize) -> Result<String, String> {
    let kind: MaskKind = kind.parse()?;
    if d == 0 || d > MAX_SIDE {
        return Err(format!("dimension must lie in [1, {MAX_SIDE}]"));
    }
    kind.check_k(k, d, "k").map_err(|e| e.to_string())?;
    Ok(json!({ "weights": rows(&weight_matrix(kind, k, d)) }).to_string())
}

#[allow(clippy::too_many_arguments)]
/// Simulates a dataset, fits a separable estimator at `(k1, k2)`, and
/// returns both factor pairs with the Frobenius error of the product.
pub fn simulate_and_fit_json(
    n: usize,
    p: usize,
    q: usize,
    model: &str,
    rho: f64,
    method: &str,
    k1: usize,
    k2: usize,
    seed: u64,
) -> Result<String, String> {
    let cfg = sim(n, p, q, model, rho, seed)?;
    let kind: EstimatorKind = method.parse()?;
    if kind.is_baseline() || kind.is_robust() {
        return Err("the demo fits the band and taper estimators only".into());
    }
    let ds = cfg.generate().map_err(|e| e.to_string())?;
    let truth = cfg.truth().map_err(|e| e.to_string())?;
    let Estimate::Separable(fit) = tuning::fit(&ds, kind, k1, k2, None, CovOptions::default()).map_err(|e| e.to_string())? else {
        unreachable!("separable estimators return separable fits")
    };
    let error = norm_diff_separable(&fit.cov, &truth, NormKind::Frobenius).map_err(|e| e.to_string())?;
    Ok(json!({
        "sigma1": rows(fit.cov.sigma1.matrix()),
        "sigma2": rows(fit.cov.sigma2.matrix()),
        "truth1": rows(truth.sigma1.matrix()),
        "truth2": rows(truth.sigma2.matrix()),
        "error": error,
        "sigma": fit.factor.sigma,
        "iterations": fit.factor.iterations,
    })
    .to_string())
}

#[allow(clippy::too_many_arguments)]
/// Averaged split criterion over `{0..cap}²` (band) or even values up to
/// `2·cap` (taper), with the selected pair.
pub fn tuning_grid_json(n: usize, p: usize, q: usize, model: &str, rho: f64, method: &str, cap: usize, seed: u64) -> Result<String, String> {
    let cfg = sim(n, p, q, model, rho, seed)?;
    let kind: EstimatorKind = method.parse()?;
    if kind.is_baseline() || kind.is_robust() {
        return Err("the demo tunes the band and taper estimators only".into());
    }
    let ds = cfg.generate().map_err(|e| e.to_string())?;
    let grid = |d: usize| -> Vec<usize> {
        match kind.mask() {
            MaskKind::Band => (0..=cap.min(d - 1)).collect(),
            MaskKind::Taper => (0..=(2 * cap).min(2 * d)).step_by(2).collect(),
        }
    };
    let tcfg = TuningConfig::new(kind).with_grids(grid(p), grid(q)).with_seed(seed);
    let r = tuning::select(&ds, &tcfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "grid1": tcfg.grid1,
        "grid2": tcfg.grid2,
        "scores": r.score_grid.iter().map(|g| g.score).collect::<Vec<_>>(),
        "k1": r.k1,
        "k2": r.k2,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn mask_weights(kind: &str, k: usize, d: usize) -> Result<String, JsError> {
    mask_weights_json(kind, k, d).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_and_fit(n: usize, p: usize, q: usize, model: &str, rho: f64, method: &str, k1: usize, k2: usize, seed: u32) -> Result<String, JsError> {
    simulate_and_fit_json(n, p, q, model, rho, method, k1, k2, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn tuning_grid(n: usize, p: usize, q: usize, model: &str, rho: f64, method: &str, cap: usize, seed: u32) -> Result<String, JsError> {
    tuning_grid_json(n, p, q, model, rho, method, cap, seed as u64).map_err(|e| JsError::new(&e))
}
