//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that reproduce published Monte Carlo numbers are reported but do
//! not fail the target; every other criterion does. `KRONBAND_ACCEPTANCE_REPS`
//! lowers the replication count for quick local runs.

use std::process::ExitCode;
use std::time::Instant;

use kronband::bench::{run_experiment, ExperimentSpec, Method, ResultTable};
use kronband::covariance::sample_cov;
use kronband::matrix::{vec, Mat, MatrixDataset, NormKind};
use kronband::nkp::{
    band_equivalence_check, kron_factorize, kron_fit, leading_singular_triple, rearrange_dense, unrearrange, unvec_square,
    KronSource, RearrangedView, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use kronband::regularize::{mask_separable, MaskKind};
use kronband::rng;
use kronband::simulate::{CovKind, SimConfig, TParameterization, Tail};
use kronband::tuning::{self, CovOptions, EstimatorKind, GridCaps};
use rand::Rng;

const SEED: u64 = 20240601;

/// Grid caps for the Monte Carlo criteria. Selected bandwidths in these
/// settings stay well inside them.
const CAPS: GridCaps = GridCaps { band: 8, taper: 16, baseline: 40 };

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    gating: bool,
    detail: String,
}

fn reps() -> usize {
    std::env::var("KRONBAND_ACCEPTANCE_REPS").ok().and_then(|s| s.parse().ok()).unwrap_or(100)
}

fn random_mat(g: &mut rng::SimRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| g.random_range(-1.0..1.0))
}

fn random_shape(g: &mut rng::SimRng, max_side: usize, max_dim: usize) -> (usize, usize) {
    loop {
        let (p, q) = (g.random_range(1..=max_side), g.random_range(1..=max_side));
        if p * q <= max_dim {
            return (p, q);
        }
    }
}

fn random_dataset(g: &mut rng::SimRng, n: usize, p: usize, q: usize) -> MatrixDataset {
    // MA(1) factors lose positive definiteness for |ρ| above about 0.5.
    let (kind, r) = if g.random_bool(0.5) { (CovKind::Ar1, 0.8) } else { (CovKind::Ma1, 0.45) };
    let (r1, r2) = (g.random_range(-r..r), g.random_range(-r..r));
    SimConfig::new(n, p, q, kind, r1, r2).with_seed(g.random()).generate().expect("valid simulation")
}

fn xi_operator() -> Outcome {
    let t = Instant::now();
    let mut g = rng::seeded(SEED);
    let (mut kron_err, mut iso_err) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let (p, q) = (g.random_range(1..=6), g.random_range(1..=6));
        let b = random_mat(&mut g, q, q);
        let c = random_mat(&mut g, p, p);
        let xi = rearrange_dense(&b.kronecker(&c), p, q).unwrap();
        let outer = Mat::from_column_slice(q * q, 1, &vec(&b)) * Mat::from_row_slice(1, p * p, &vec(&c));
        kron_err = kron_err.max((xi - outer).amax());
        let m = random_mat(&mut g, p * q, p * q);
        let xm = rearrange_dense(&m, p, q).unwrap();
        iso_err = iso_err.max((xm.norm() - m.norm()).abs() / m.norm());
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        title: "rearrangement of Kronecker products and Frobenius isometry",
        pass: kron_err <= 1e-14 && iso_err <= 1e-12 && secs < 1.0,
        gating: true,
        detail: format!("max |ξ(B⊗C) - vec B vec Cᵀ| = {kron_err:.1e}, max relative isometry error = {iso_err:.1e}, {secs:.2}s"),
    }
}

fn nkp_oracle() -> Outcome {
    let t = Instant::now();
    let mut g = rng::seeded(SEED + 1);
    let (mut prod_err, mut ey_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (p, q) = random_shape(&mut g, 6, 36);
        let a = random_mat(&mut g, p * q, p * q + 2);
        let m = &a * a.transpose();
        let fit = kron_factorize(KronSource::Dense { matrix: &m, p, q }, DEFAULT_TOL).unwrap();
        let product = fit.to_dense().into_inner();

        let svd = rearrange_dense(&m, p, q).unwrap().svd(true, true);
        let i = svd.singular_values.imax();
        let s = svd.singular_values[i];
        let rank1 = svd.u.unwrap().column(i) * svd.v_t.unwrap().row(i) * s;
        let oracle = unrearrange(&rank1, p, q).unwrap();
        prod_err = prod_err.max((&product - oracle).norm());

        let lhs = (&m - &product).norm_squared();
        let rhs = m.norm_squared() - s * s;
        ey_err = ey_err.max((lhs - rhs).abs() / m.norm_squared());
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 2,
        title: "nearest Kronecker product agrees with a dense SVD",
        pass: prod_err <= 1e-8 && ey_err <= 1e-8 && secs < 10.0,
        gating: true,
        detail: format!("max product error = {prod_err:.1e}, max relative residual identity error = {ey_err:.1e}, {secs:.2}s"),
    }
}

fn band_equivalence() -> Outcome {
    let t = Instant::now();
    let mut g = rng::seeded(SEED + 2);
    let (mut worst, mut ok) = (f64::NEG_INFINITY, 0);
    for i in 0..50 {
        let (p, q) = random_shape(&mut g, 6, 36);
        let n = g.random_range(5..40);
        let ds = random_dataset(&mut g, n, p, q);
        let cov = sample_cov(&ds, true).unwrap();
        let (k1, k2) = (g.random_range(0..p), g.random_range(0..q));
        let r = band_equivalence_check(&cov, k1, k2, SEED + i).unwrap();
        worst = worst.max(r.nkp_objective - r.search_objective);
        ok += r.nkp_no_worse(1e-9) as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 3,
        title: "doubly banded NKP solves the banded Kronecker problem",
        pass: ok == 50 && secs < 120.0,
        gating: true,
        detail: format!("{ok}/50 no worse than restart search, max excess = {worst:.1e}, {secs:.1}s"),
    }
}

fn off_band(m: &Mat, k: usize) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i.abs_diff(j) > k {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

fn banded_factors() -> Outcome {
    let mut g = rng::seeded(SEED + 3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, q) = random_shape(&mut g, 12, 144);
        let n = g.random_range(5..60);
        let ds = random_dataset(&mut g, n, p, q);
        let cov = sample_cov(&ds, true).unwrap();
        let (k1, k2) = (g.random_range(0..p), g.random_range(0..q));
        let masked = mask_separable(&cov, k1, k2, MaskKind::Band).unwrap();
        let view = RearrangedView::from_masked(&masked);
        // Raw singular vectors, before any clean-up in the fit.
        let t = leading_singular_triple(&view, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        worst = worst.max(off_band(&unvec_square(&t.u).unwrap(), k2));
        worst = worst.max(off_band(&unvec_square(&t.v).unwrap(), k1));
        let fit = kron_fit(KronSource::Masked(&masked), DEFAULT_TOL).unwrap();
        worst = worst.max(off_band(fit.cov.sigma1.matrix(), k1)).max(off_band(fit.cov.sigma2.matrix(), k2));
    }
    Outcome {
        id: 4,
        title: "doubly banded inputs give banded factors",
        pass: worst <= 1e-12,
        gating: true,
        detail: format!("max off-band magnitude over 100 instances = {worst:.1e}"),
    }
}

fn experiment(sim: SimConfig, methods: Vec<Method>, reps: usize) -> ResultTable {
    let mut spec = ExperimentSpec::new(sim.with_seed(SEED), methods);
    spec.reps = reps;
    spec.metrics = vec![NormKind::Frobenius];
    spec.tuning.caps = CAPS;
    run_experiment(&spec).expect("experiment runs")
}

fn mean(t: &ResultTable, m: Method) -> (f64, f64) {
    let r = t.row(m, NormKind::Frobenius).expect("method in table");
    (r.mean, r.se)
}

fn mode(values: impl Iterator<Item = usize>) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    counts.into_iter().max_by_key(|&(v, c)| (c, std::cmp::Reverse(v))).map_or(0, |(v, _)| v)
}

fn selected(t: &ResultTable, m: Method) -> (Vec<usize>, Vec<usize>) {
    let i = t.spec.methods.iter().position(|&x| x == m).unwrap();
    t.records.iter().map(|r| (r.methods[i].k1.unwrap(), r.methods[i].k2.unwrap())).unzip()
}

fn table_one(reps: usize) -> (Outcome, Outcome) {
    let t = Instant::now();
    let sim = SimConfig::new(50, 20, 30, CovKind::Ma1, 0.5, 0.5);
    let table = experiment(sim, Method::ALL[..5].to_vec(), reps);
    let mins = t.elapsed().as_secs_f64() / 60.0;

    let (pb, _) = mean(&table, Method::ProposedBand);
    let (pt, _) = mean(&table, Method::ProposedTaper);
    let (bb, _) = mean(&table, Method::BaselineBand);
    let (bt, _) = mean(&table, Method::BaselineTaper);
    let (sample, _) = mean(&table, Method::Sample);
    let kb = table.method(Method::ProposedBand).unwrap();
    let (kb1, kb2) = (kb.k1_mean.unwrap(), kb.k2_mean.unwrap());
    let (t1, t2) = selected(&table, Method::ProposedTaper);
    let (mt1, mt2) = (mode(t1.into_iter()), mode(t2.into_iter()));
    let within = |x: f64, target: f64, tol: f64| (x - target).abs() <= tol * target;
    let band_k = (1.4..=2.2).contains(&kb1) && (1.4..=2.2).contains(&kb2);
    let five = Outcome {
        id: 5,
        title: "Table 1 MA(1) errors and selected bandwidths",
        pass: within(pb, 8.41, 0.15) && within(pt, 8.71, 0.15) && band_k && mt1 == 2 && mt2 == 2,
        gating: false,
        detail: format!(
            "proposed band {pb:.2} (target 8.41±15%), proposed taper {pt:.2} (target 8.71±15%), \
             band k̂ = ({kb1:.2}, {kb2:.2}) (target [1.4, 2.2]), taper modal k̂ = ({mt1}, {mt2}) (target 2), {reps} reps, {mins:.1} min"
        ),
    };
    let order = pb < bb && bb < sample && pt < bt && bt < sample;
    let (gb, gt) = (bb / pb, bt / pt);
    let six = Outcome {
        id: 6,
        title: "proposed < baseline < sample with a 5x gap",
        pass: order && gb >= 5.0 && gt >= 5.0,
        gating: false,
        detail: format!(
            "band {pb:.2} < {bb:.2} < {sample:.2}, taper {pt:.2} < {bt:.2} < {sample:.2}, baseline/proposed = {gb:.2} (band), {gt:.2} (taper)"
        ),
    };
    (five, six)
}

fn table_three(reps: usize) -> Outcome {
    let t = Instant::now();
    let tail = Tail::StudentT { df: 3.0, parameterization: TParameterization::Covariance };
    let sim = SimConfig::new(50, 20, 30, CovKind::Ar1, 0.5, 0.5).with_tail(tail);
    let table = experiment(sim, vec![Method::ProposedBand, Method::RobustBand], reps);
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let (rb, _) = mean(&table, Method::RobustBand);
    let (pb, _) = mean(&table, Method::ProposedBand);
    let a = table.values(Method::RobustBand, NormKind::Frobenius);
    let b = table.values(Method::ProposedBand, NormKind::Frobenius);
    let wins = a.iter().zip(&b).filter(|(x, y)| x < y).count();
    let need = (0.95 * reps as f64).ceil() as usize;
    let tau = table.method(Method::RobustBand).unwrap().tau_mean.unwrap();
    Outcome {
        id: 7,
        title: "Table 3 robust band under t3 tails",
        pass: (rb - 16.70).abs() <= 0.25 * 16.70 && wins >= need,
        gating: false,
        detail: format!(
            "robust band {rb:.2} (target 16.70±25%), proposed band {pb:.2}, robust below proposed in {wins}/{} paired reps (need {need}), mean τ̂ {tau:.2}, {mins:.1} min",
            a.len()
        ),
    }
}

fn convergence(reps: usize) -> Outcome {
    let t = Instant::now();
    let runs: Vec<(usize, f64, f64)> = [50, 100, 200]
        .into_iter()
        .map(|n| {
            let table = experiment(SimConfig::new(n, 20, 30, CovKind::Ar1, 0.5, 0.5), vec![Method::ProposedBand], reps);
            let (m, se) = mean(&table, Method::ProposedBand);
            (n, m, se)
        })
        .collect();
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let gap_ok = |a: &(usize, f64, f64), b: &(usize, f64, f64)| a.1 - b.1 > 2.0 * (a.2 * a.2 + b.2 * b.2).sqrt();
    let pass = gap_ok(&runs[0], &runs[1]) && gap_ok(&runs[1], &runs[2]);
    let detail = runs.iter().map(|(n, m, se)| format!("n={n}: {m:.2} (se {se:.2})")).collect::<Vec<_>>().join(", ");
    Outcome {
        id: 8,
        title: "error decreases in n, each gap beyond 2 standard errors",
        pass,
        gating: true,
        detail: format!("{detail}, {reps} reps each, {mins:.1} min"),
    }
}

fn robust_degeneracy() -> Outcome {
    let mut g = rng::seeded(SEED + 9);
    let plain = CovOptions { center: false, center_transform: false };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (p, q) = (g.random_range(2..8), g.random_range(2..8));
        let n = g.random_range(5..40);
        let ds = random_dataset(&mut g, n, p, q);
        let tau = ds.max_abs() * (1.0 + g.random::<f64>()) + 1e-9;
        for (robust, kind, k1, k2) in [
            (EstimatorKind::RobustBand, EstimatorKind::Band, g.random_range(0..p), g.random_range(0..q)),
            (EstimatorKind::RobustTaper, EstimatorKind::Taper, g.random_range(0..=2 * p), g.random_range(0..=2 * q)),
        ] {
            let a = tuning::fit(&ds, robust, k1, k2, Some(tau), plain).unwrap().to_dense();
            let b = tuning::fit(&ds, kind, k1, k2, None, plain).unwrap().to_dense();
            worst = worst.max((a.matrix() - b.matrix()).amax());
        }
    }
    Outcome {
        id: 9,
        title: "robust estimators at τ above every entry equal uncentered plain ones",
        pass: worst <= 1e-10,
        gating: true,
        detail: format!("max entrywise difference over 20 datasets = {worst:.1e}"),
    }
}

fn determinism() -> Outcome {
    let sim = SimConfig::new(30, 5, 6, CovKind::Ar1, 0.5, 0.3).with_seed(SEED);
    let mut spec = ExperimentSpec::new(sim, Method::ALL.to_vec());
    spec.reps = 6;
    spec.tuning.splits = 4;
    spec.tuning.caps = GridCaps { band: 3, taper: 6, baseline: 6 };
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&spec)).unwrap().to_csv()
    };
    let outputs: Vec<String> = [1, 2, 3].into_iter().map(csv).collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome {
        id: 10,
        title: "bench CSV is independent of the thread count",
        pass: same,
        gating: true,
        detail: format!("threads 1, 2, 3 give {} CSV output ({} bytes)", if same { "identical" } else { "different" }, outputs[0].len()),
    }
}

fn main() -> ExitCode {
    let reps = reps();
    let mut outcomes = vec![xi_operator(), nkp_oracle(), band_equivalence(), banded_factors()];
    let (five, six) = table_one(reps);
    outcomes.extend([five, six, table_three(reps), convergence(reps), robust_degeneracy(), determinism()]);

    let mut failed_gate = false;
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if o.gating || o.pass { "" } else { " [reproduction, non-gating]" };
        println!("{status} criterion {}: {}{note}: {}", o.id, o.title, o.detail);
        failed_gate |= o.gating && !o.pass;
    }
    if failed_gate {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
