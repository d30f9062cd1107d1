use kronband::covariance::{robust_cov, sample_cov};
use kronband::matrix::{norm_frobenius, norm_l1, norm_linf, norm_max, norm_operator, unvec, vec, Mat, MatrixDataset};
use kronband::nkp::{kron_fit, rearrange_dense, unrearrange, KronSource, RearrangedView, DEFAULT_TOL};
use kronband::regularize::{mask_separable, MaskKind};
use proptest::prelude::*;

fn mat(r: usize, c: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v))
}

fn square(p: usize, q: usize) -> impl Strategy<Value = Mat> {
    mat(p * q, p * q)
}

fn shaped() -> impl Strategy<Value = (usize, usize, Mat)> {
    (1usize..5, 1usize..5).prop_flat_map(|(p, q)| (Just(p), Just(q), square(p, q)))
}

fn dataset() -> impl Strategy<Value = MatrixDataset> {
    (3usize..12, 1usize..5, 1usize..5).prop_flat_map(|(n, p, q)| {
        prop::collection::vec(-4.0f64..4.0, n * p * q).prop_map(move |d| MatrixDataset::new(p, q, d).unwrap())
    })
}

proptest! {
    #[test]
    fn vec_unvec_round_trip(x in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| mat(r, c))) {
        prop_assert_eq!(unvec(&vec(&x), x.nrows(), x.ncols()).unwrap(), x);
    }

    #[test]
    fn rearrangement_is_a_linear_isometry((p, q, a) in shaped(), b_seed in any::<u64>(), s in -2.0f64..2.0) {
        let b = Mat::from_fn(p * q, p * q, |i, j| ((i * 31 + j * 17) as u64 ^ b_seed) as f64 % 7.0 - 3.0);
        let xa = rearrange_dense(&a, p, q).unwrap();
        let xb = rearrange_dense(&b, p, q).unwrap();
        let xs = rearrange_dense(&(&a * s + &b), p, q).unwrap();
        prop_assert!((xs - (xa.clone() * s + xb)).amax() <= 1e-12);
        prop_assert!((xa.norm() - a.norm()).abs() <= 1e-12 * a.norm().max(1.0));
        prop_assert_eq!(unrearrange(&xa, p, q).unwrap(), a);
    }

    #[test]
    fn norm_inequalities(a in (1usize..6).prop_flat_map(|d| mat(d, d))) {
        let a = (&a + a.transpose()) * 0.5;
        let op = norm_operator(&a, 1e-12, 10_000).unwrap();
        let d = a.nrows() as f64;
        let tol = 1e-8 * (1.0 + a.norm());
        prop_assert!(norm_max(&a) <= op + tol);
        prop_assert!(op <= norm_frobenius(&a) + tol);
        prop_assert!(norm_frobenius(&a) <= d.sqrt() * op + tol);
        prop_assert!(op <= norm_l1(&a).sqrt() * norm_linf(&a).sqrt() + tol);
    }

    #[test]
    fn implicit_and_materialized_views_agree(ds in dataset(), k1 in 0usize..4, k2 in 0usize..4, taper in any::<bool>()) {
        let kind = if taper { MaskKind::Taper } else { MaskKind::Band };
        let (k1, k2) = (k1.min(kind.max_k(ds.p())), k2.min(kind.max_k(ds.q())));
        let cov = sample_cov(&ds, true).unwrap();
        let masked = mask_separable(&cov, k1, k2, kind).unwrap();
        let a = RearrangedView::implicit(&masked);
        let b = RearrangedView::materialize_masked(&masked);
        prop_assert!(!a.is_materialized() && b.is_materialized());
        prop_assert!((a.to_dense() - b.to_dense()).amax() <= 1e-12);
        let (rows, cols) = a.shape();
        let v: Vec<f64> = (0..cols).map(|i| (i as f64 * 0.37).sin()).collect();
        let (mut ya, mut yb) = (vec![0.0; rows], vec![0.0; rows]);
        a.matvec(&v, &mut ya);
        b.matvec(&v, &mut yb);
        for (x, y) in ya.iter().zip(&yb) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn fit_is_scale_equivariant(ds in dataset(), c in 0.1f64..10.0) {
        let m = sample_cov(&ds, true).unwrap().matrix.into_inner();
        prop_assume!(m.norm() > 1e-6);
        let (p, q) = (ds.p(), ds.q());
        let f1 = kron_fit(KronSource::Dense { matrix: &m, p, q }, DEFAULT_TOL).unwrap();
        let scaled = &m * c;
        let f2 = kron_fit(KronSource::Dense { matrix: &scaled, p, q }, DEFAULT_TOL).unwrap();
        let d1 = f1.cov.to_dense().into_inner() * c;
        let d2 = f2.cov.to_dense().into_inner();
        prop_assert!((d1 - d2).norm() <= 1e-6 * c * m.norm());
    }

    #[test]
    fn huge_tau_is_the_uncentered_covariance(ds in dataset()) {
        let tau = ds.max_abs() * 2.0 + 1.0;
        let r = robust_cov(&ds, tau).unwrap();
        let u = sample_cov(&ds, false).unwrap();
        prop_assert!((r.matrix.matrix() - u.matrix.matrix()).amax() <= 1e-12);
    }
}
