//! Checks against independently computed references: dense SVDs,
//! materialized Kronecker products, Monte Carlo moments and coordinate
//! descent over banded factors.

use kronband::covariance::sample_cov;
use kronband::matrix::{DenseSymMatrix, Mat, MatrixDataset};
use kronband::nkp::{
    band_equivalence_check, kron_fit, leading_singular_triple, rearrange_dense, unrearrange, KronSource, RearrangedView,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use kronband::regularize::{mask_separable, MaskKind};
use kronband::rng;
use kronband::simulate::{build_cov, sample_matrix_normal, sample_matrix_t, CovKind, CovModel, SimConfig, TParameterization};
use kronband::tuning::{self, CovOptions, Estimate, EstimatorKind, TuningConfig};
use rand::Rng;

fn random_mat(r: usize, c: usize, seed: u64) -> Mat {
    let mut g = rng::seeded(seed);
    Mat::from_fn(r, c, |_, _| g.random_range(-1.0..1.0))
}

fn ar1(d: usize, rho: f64) -> DenseSymMatrix {
    build_cov(CovModel::new(CovKind::Ar1, d, rho)).unwrap()
}

/// Rank-one reconstruction of `ξ(M)` from nalgebra's SVD, mapped back.
fn svd_oracle(m: &Mat, p: usize, q: usize) -> (f64, Mat) {
    let xi = rearrange_dense(m, p, q).unwrap();
    let svd = xi.svd(true, true);
    let i = svd.singular_values.imax();
    let s = svd.singular_values[i];
    let u = svd.u.unwrap().column(i).into_owned();
    let vt = svd.v_t.unwrap().row(i).into_owned();
    (s, unrearrange(&(u * vt * s), p, q).unwrap())
}

fn empirical_cov(ds: &MatrixDataset) -> Mat {
    sample_cov(ds, true).unwrap().matrix.into_inner()
}

#[test]
fn diagonal_view_has_its_largest_entry_as_sigma() {
    let mut xi = Mat::zeros(4, 4);
    xi[(0, 0)] = 3.0;
    xi[(1, 1)] = 1.0;
    let m = unrearrange(&xi, 2, 2).unwrap();
    let view = RearrangedView::from_dense(&m, 2, 2).unwrap();
    let t = leading_singular_triple(&view, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert!((t.sigma - 3.0).abs() < 1e-12);
}

#[test]
fn nine_by_four_view_matches_dense_svd() {
    for seed in 0..20 {
        let m = random_mat(6, 6, seed);
        let view = RearrangedView::from_dense(&m, 2, 3).unwrap();
        assert_eq!(view.shape(), (9, 4));
        let t = leading_singular_triple(&view, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let (s, _) = svd_oracle(&m, 2, 3);
        assert!((t.sigma - s).abs() <= 1e-9 * s, "seed {seed}: {} vs {s}", t.sigma);
    }
}

#[test]
fn exact_separable_input_is_recovered() {
    let (s1, s2) = (ar1(3, 0.5), ar1(2, 0.5));
    let m = s2.matrix().kronecker(s1.matrix());
    let fit = kron_fit(KronSource::Dense { matrix: &m, p: 3, q: 2 }, DEFAULT_TOL).unwrap();
    assert!((fit.cov.to_dense().into_inner() - &m).norm() < 1e-10);
    assert!(fit.residual_frobenius < 1e-6);
}

#[test]
fn doubly_banded_ma1_fit_matches_dense_pipeline() {
    let ds = SimConfig::new(50, 4, 5, CovKind::Ma1, 0.5, 0.5).with_seed(11).generate().unwrap();
    let cov = sample_cov(&ds, true).unwrap();
    let masked = mask_separable(&cov, 1, 1, MaskKind::Band).unwrap();
    let fit = kron_fit(KronSource::Masked(&masked), DEFAULT_TOL).unwrap();
    let (_, oracle) = svd_oracle(&masked.to_dense().unwrap().into_inner(), 4, 5);
    assert!((fit.cov.to_dense().into_inner() - oracle).norm() < 1e-8);
}

#[test]
fn implicit_and_materialized_triples_agree() {
    let ds = SimConfig::new(30, 5, 4, CovKind::Ar1, 0.6, 0.3).with_seed(5).generate().unwrap();
    let cov = sample_cov(&ds, true).unwrap();
    for kind in [MaskKind::Band, MaskKind::Taper] {
        let masked = mask_separable(&cov, 2, 2, kind).unwrap();
        let a = leading_singular_triple(&RearrangedView::implicit(&masked), 1e-13, 20_000).unwrap();
        let b = leading_singular_triple(&RearrangedView::materialize_masked(&masked), 1e-13, 20_000).unwrap();
        assert!((a.sigma - b.sigma).abs() <= 1e-12 * b.sigma);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(s, t)| (s - t).abs() <= 1e-10);
        assert!(close(&a.u, &b.u) && close(&a.v, &b.v));
    }
}

#[test]
fn banded_nkp_beats_coordinate_descent() {
    for seed in 0..5 {
        let ds = SimConfig::new(8, 2, 3, CovKind::Ar1, 0.5, 0.5).with_seed(seed).generate().unwrap();
        let cov = sample_cov(&ds, true).unwrap();
        let r = band_equivalence_check(&cov, 0, 1, seed).unwrap();
        assert!(r.nkp_no_worse(1e-9), "{r:?}");
    }
}

#[test]
fn full_band_is_the_unconstrained_nkp() {
    let ds = SimConfig::new(20, 3, 4, CovKind::Ar1, 0.5, 0.5).with_seed(2).generate().unwrap();
    let cov = sample_cov(&ds, true).unwrap();
    let Estimate::Separable(banded) = tuning::fit_cov(&cov, EstimatorKind::Band, 2, 3).unwrap() else { panic!() };
    let full = kron_fit(KronSource::Dense { matrix: cov.matrix.matrix(), p: 3, q: 4 }, DEFAULT_TOL).unwrap();
    assert!((banded.cov.to_dense().into_inner() - full.cov.to_dense().into_inner()).norm() < 1e-9);
}

#[test]
fn separable_banded_truth_is_exact() {
    let (s1, s2) = (build_cov(CovModel::new(CovKind::Ma1, 3, 0.4)).unwrap(), build_cov(CovModel::new(CovKind::Ma1, 2, 0.4)).unwrap());
    let m = s2.matrix().kronecker(s1.matrix());
    let cov = kronband::covariance::CovEstimate {
        matrix: DenseSymMatrix::new(m).unwrap(),
        centered: true,
        kind: kronband::covariance::CovKind::Sample,
        p: 3,
        q: 2,
    };
    let r = band_equivalence_check(&cov, 1, 1, 0).unwrap();
    assert!(r.nkp_objective < 1e-18 && r.search_objective < 1e-9, "{r:?}");
}

#[test]
fn matrix_normal_has_kronecker_covariance_in_vec_order() {
    let (s1, s2) = (ar1(2, 0.5), build_cov(CovModel::new(CovKind::Ar1, 3, 0.7)).unwrap());
    let ds = sample_matrix_normal(100_000, &s1, &s2, &mut rng::seeded(1)).unwrap();
    let truth = s2.matrix().kronecker(s1.matrix());
    let swapped = s1.matrix().kronecker(s2.matrix());
    let emp = empirical_cov(&ds);
    assert!((&emp - &truth).amax() < 0.05);
    assert!((&emp - &swapped).amax() > 0.1);
}

#[test]
fn matrix_normal_square_case_within_monte_carlo_noise() {
    let s = ar1(2, 0.5);
    let ds = sample_matrix_normal(100_000, &s, &s, &mut rng::seeded(3)).unwrap();
    assert!((empirical_cov(&ds) - s.matrix().kronecker(s.matrix())).amax() < 0.02);
}

#[test]
fn t_scale_matrix_inflates_covariance_by_df_ratio() {
    let id = DenseSymMatrix::identity(2);
    let ds = sample_matrix_t(100_000, &id, &id, 3.0, TParameterization::Scale, &mut rng::seeded(4)).unwrap();
    let emp = empirical_cov(&ds);
    // df/(df-2) = 3; the fourth moment is infinite, so the diagonal is noisy.
    for i in 0..4 {
        assert!((emp[(i, i)] - 3.0).abs() < 0.6, "{}", emp[(i, i)]);
    }
    let cov = sample_matrix_t(100_000, &id, &id, 3.0, TParameterization::Covariance, &mut rng::seeded(4)).unwrap();
    assert!((empirical_cov(&cov).trace() / 4.0 - 1.0).abs() < 0.2);
}

#[test]
fn t_with_huge_df_is_nearly_gaussian() {
    let s = ar1(2, 0.5);
    let t = sample_matrix_t(50_000, &s, &s, 1e6, TParameterization::Scale, &mut rng::seeded(8)).unwrap();
    let g = sample_matrix_normal(50_000, &s, &s, &mut rng::seeded(9)).unwrap();
    assert!((empirical_cov(&t) - empirical_cov(&g)).amax() < 0.05);
}

#[test]
fn truth_bandwidth_scores_below_diagonal_fit() {
    let ds = SimConfig::new(400, 6, 6, CovKind::Ar1, 0.8, 0.8).with_seed(21).generate().unwrap();
    let mut g = rng::seeded(3);
    let (train, test) = tuning::split(&ds, 200, &mut g).unwrap();
    let opts = CovOptions::default();
    let at_truth = tuning::score(&train, &test, EstimatorKind::Band, 5, 5, None, opts).unwrap();
    let diagonal = tuning::score(&train, &test, EstimatorKind::Band, 0, 0, None, opts).unwrap();
    assert!(at_truth < diagonal, "{at_truth} vs {diagonal}");
}

#[test]
fn score_ignores_train_order() {
    let ds = SimConfig::new(40, 4, 3, CovKind::Ma1, 0.5, 0.5).with_seed(6).generate().unwrap();
    let (train, test) = tuning::split(&ds, 13, &mut rng::seeded(1)).unwrap();
    let reversed = train.select(&(0..train.n()).rev().collect::<Vec<_>>()).unwrap();
    let opts = CovOptions::default();
    let a = tuning::score(&train, &test, EstimatorKind::Taper, 2, 2, None, opts).unwrap();
    let b = tuning::score(&reversed, &test, EstimatorKind::Taper, 2, 2, None, opts).unwrap();
    assert!((a - b).abs() <= 1e-10 * a);
}

#[test]
fn ma1_selection_concentrates_near_one() {
    let ds = SimConfig::new(200, 20, 30, CovKind::Ma1, 0.5, 0.5).with_seed(31).generate().unwrap();
    let grid: Vec<usize> = (0..=5).collect();
    let cfg = TuningConfig::new(EstimatorKind::Band).with_grids(grid.clone(), grid).with_seed(1);
    let r = tuning::select(&ds, &cfg).unwrap();
    assert!((1..=3).contains(&r.k1) && (1..=3).contains(&r.k2), "({}, {})", r.k1, r.k2);
}

#[test]
fn stronger_correlation_selects_wider_bands() {
    let grid: Vec<usize> = (0..=5).collect();
    let mut wider = 0;
    for seed in 0..20 {
        let pick = |rho: f64| {
            let ds = SimConfig::new(60, 6, 6, CovKind::Ar1, rho, rho).with_seed(seed).generate().unwrap();
            let cfg = TuningConfig::new(EstimatorKind::Band).with_grids(grid.clone(), grid.clone()).with_seed(seed);
            let r = tuning::select(&ds, &cfg).unwrap();
            r.k1 + r.k2
        };
        if pick(0.8) > pick(0.1) {
            wider += 1;
        }
    }
    assert!(wider > 10, "{wider}/20");
}

#[test]
fn full_band_score_equals_unregularized_fit() {
    let ds = SimConfig::new(30, 3, 4, CovKind::Ar1, 0.5, 0.5).with_seed(9).generate().unwrap();
    let (train, test) = tuning::split(&ds, 10, &mut rng::seeded(2)).unwrap();
    let opts = CovOptions::default();
    let banded = tuning::score(&train, &test, EstimatorKind::Band, 2, 3, None, opts).unwrap();
    let cov = sample_cov(&train, true).unwrap();
    let full = kron_fit(KronSource::Dense { matrix: cov.matrix.matrix(), p: 3, q: 4 }, DEFAULT_TOL).unwrap();
    let test_cov = sample_cov(&test, true).unwrap();
    let direct = kronband::matrix::norm_l1(&(full.cov.to_dense().into_inner() - test_cov.matrix.matrix()));
    assert!((banded - direct).abs() <= 1e-9 * direct);
}

#[test]
fn robust_at_max_tau_is_plain_uncentered() {
    let ds = SimConfig::new(25, 4, 5, CovKind::Ma1, 0.5, 0.5).with_seed(12).generate().unwrap();
    let tau = ds.max_abs() + 1.0;
    let plain = CovOptions { center: false, center_transform: false };
    let a = tuning::fit(&ds, EstimatorKind::RobustTaper, 2, 4, Some(tau), plain).unwrap().to_dense();
    let b = tuning::fit(&ds, EstimatorKind::Taper, 2, 4, None, plain).unwrap().to_dense();
    assert!((a.matrix() - b.matrix()).amax() <= 1e-10);
}
