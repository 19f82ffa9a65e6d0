use hadamard::basis::{make_basis, OpMatrix, TimeGrid, OpFamily};
use hadamard::geometry::jp;
use hadamard::linalg::{cr, dagger, diag_real, eye, fro, rel_diff, Weight, C64};
use hadamard::operator::{
    frac_power_quadrature, power_difference_decay, power_op, smoothing_order, sqrt_op, P_THRESHOLD,
};
use hadamard::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, seed: u64, lo: f64, hi: f64) -> OpMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Array2::from_shape_fn((n, n), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let q = {
        let h = &g + &dagger(&g);
        let (_, v) = hadamard::linalg::eigh(&h).unwrap();
        v
    };
    let vals: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    hadamard::linalg::from_spectrum(&ndarray::Array1::from(vals), &q, cr)
}

fn random_weight(n: usize, seed: u64) -> Weight {
    Weight::new(&random_spd(n, seed, 0.5, 2.0)).unwrap()
}

#[test]
fn eigh_reconstructs_complex_hermitian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for imag in [1.0, 1e-10] {
        let g = Array2::from_shape_fn((12, 12), |_| C64::new(rng.random::<f64>() - 0.5, imag * (rng.random::<f64>() - 0.5)));
        let h = &g + &dagger(&g);
        let (vals, vecs) = hadamard::linalg::eigh(&h).unwrap();
        let back = hadamard::linalg::from_spectrum(&vals, &vecs, cr);
        assert!(fro(&(&back - &h)) <= 1e-13 * fro(&h));
    }
}

#[test]
fn sqrt_of_diagonal() {
    let b = make_basis(8, 2.0 * std::f64::consts::PI).unwrap();
    let a = diag_real(b.modes().map(|k| (k * k) as f64 + 1.0));
    let e = sqrt_op(&a, &Weight::identity(b.n)).unwrap();
    let want = diag_real(b.modes().map(|k| ((k * k) as f64 + 1.0).sqrt()));
    assert!(fro(&(e - want)) < 1e-13);
}

#[test]
fn sqrt_squares_back() {
    let a = random_spd(6, 1, 0.3, 40.0);
    let e = sqrt_op(&a, &Weight::identity(6)).unwrap();
    assert!(rel_diff(&e.dot(&e), &a) < 1e-12);
}

#[test]
fn sqrt_rejects_tiny_spectrum() {
    let a = diag_real([1e-14, 1.0, 2.0]);
    assert!(matches!(sqrt_op(&a, &Weight::identity(3)), Err(Error::NotPositive { .. })));
}

#[test]
fn sqrt_rejects_non_self_adjoint() {
    let mut a = diag_real([1.0, 2.0, 3.0]);
    a[[0, 1]] = cr(0.5);
    assert!(matches!(sqrt_op(&a, &Weight::identity(3)), Err(Error::NotSelfAdjoint { .. })));
}

#[test]
fn weighted_sqrt_is_weighted_self_adjoint() {
    let w = random_weight(7, 3);
    let h = random_spd(7, 4, 1.0, 50.0);
    let a = w.from_flat(&h);
    let e = sqrt_op(&a, &w).unwrap();
    assert!(rel_diff(&e.dot(&e), &a) < 1e-10);
    assert!(w.self_adjoint_residual(&e) < 1e-9);
    let q = frac_power_quadrature(&a, &w, 0.5, 128).unwrap();
    assert!(w.self_adjoint_residual(&q) < 1e-9);
}

#[test]
fn quadrature_scalar_case() {
    let a = eye(3) * cr(4.0);
    let r = frac_power_quadrature(&a, &Weight::identity(3), 0.5, 64).unwrap();
    assert!(fro(&(r - eye(3) * cr(2.0))) < 1e-8);
}

#[test]
fn quadrature_matches_eigen_route_on_laplacian() {
    let b = make_basis(32, 2.0 * std::f64::consts::PI).unwrap();
    let a = diag_real(b.modes().map(|k| (k * k) as f64 + 1.0));
    let w = Weight::identity(b.n);
    let q = frac_power_quadrature(&a, &w, 0.5, 128).unwrap();
    let e = sqrt_op(&a, &w).unwrap();
    assert!(fro(&(&q - &e)) / fro(&e) <= 1e-7);
}

#[test]
fn quarter_power_composes() {
    let a = random_spd(6, 9, 1.0, 100.0);
    let q = frac_power_quadrature(&a, &Weight::identity(6), 0.25, 128).unwrap();
    let q4 = q.dot(&q).dot(&q).dot(&q);
    assert!(rel_diff(&q4, &a) <= 1e-6);
}

#[test]
fn smoothing_diagnostics() {
    let b = make_basis(32, 2.0 * std::f64::consts::PI).unwrap();
    let z = OpMatrix::zeros((b.n, b.n));
    let r = smoothing_order(&z, &b, 4, (8, 16), P_THRESHOLD).unwrap();
    assert!(r.amplified.iter().all(|&s| s == 0.0) && r.fit.exponent.is_infinite());

    let d8 = diag_real(b.japanese().into_iter().map(|j| j.powf(-8.0)));
    let r = smoothing_order(&d8, &b, 4, (8, 16), P_THRESHOLD).unwrap();
    assert!(r.amplified.iter().all(|&s| s <= 1.0 + 1e-12));
    assert!((r.fit.exponent - 8.0).abs() < 1e-9 && r.smoothing);

    let r = smoothing_order(&eye(b.n), &b, 2, (8, 16), P_THRESHOLD).unwrap();
    let kmax = b.japanese()[0];
    assert!((r.amplified[2] - kmax.powi(4)).abs() < 1e-9 * kmax.powi(4));
    assert!(r.fit.exponent.abs() < 1e-12 && !r.smoothing);
}

#[test]
fn power_difference_scalar_profile() {
    let b = make_basis(8, 2.0 * std::f64::consts::PI).unwrap();
    let a2 = diag_real(b.modes().map(|k| (k * k) as f64 + 1.0));
    let grid = TimeGrid::new(-40.0, 40.0, 161).unwrap();
    let fam = OpFamily::from_fn(grid, |i| &a2 * cr(1.0 + jp(grid.node(i)).powi(-2)));
    let ws = vec![Weight::identity(b.n); grid.n_nodes];
    let fit = power_difference_decay(&fam, &ws, &a2, &Weight::identity(b.n), 0.5, (5.0, 40.0)).unwrap();
    assert!((fit.exponent - 2.0).abs() < 0.05, "{fit:?}");
    let same = OpFamily::from_fn(grid, |_| a2.clone());
    let fit = power_difference_decay(&same, &ws, &a2, &Weight::identity(b.n), 0.5, (5.0, 40.0)).unwrap();
    assert!(fit.is_exact());
}

#[test]
fn monotone_on_commuting_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let d2: Vec<f64> = (0..9).map(|_| 0.5 + 10.0 * rng.random::<f64>()).collect();
        let d1: Vec<f64> = d2.iter().map(|v| v + rng.random::<f64>()).collect();
        let w = Weight::identity(9);
        let s1 = power_op(&diag_real(d1), &w, 0.5, 1e-10).unwrap();
        let s2 = power_op(&diag_real(d2), &w, 0.5, 1e-10).unwrap();
        assert!(hadamard::linalg::min_eig_herm(&(s1 - s2)).unwrap() >= -1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigen_and_quadrature_routes_agree(seed in 0u64..1000, top in 1.0f64..4.0) {
        let a = random_spd(8, seed, 1.0, 10f64.powf(top));
        let w = Weight::identity(8);
        let e = sqrt_op(&a, &w).unwrap();
        let q = frac_power_quadrature(&a, &w, 0.5, 128).unwrap();
        prop_assert!(fro(&(&q - &e)) / fro(&e) <= 1e-6);
        prop_assert!(rel_diff(&e.dot(&e), &a) <= 1e-10);
    }

    #[test]
    fn weighted_adjoint_is_involutive_antihomomorphism(seed in 0u64..1000) {
        let w = random_weight(6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let mut rnd = || Array2::from_shape_fn((6, 6), |_| hadamard::linalg::C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let a = rnd();
        let b = rnd();
        prop_assert!(rel_diff(&w.adjoint(&w.adjoint(&a)), &a) < 1e-12);
        let lhs = w.adjoint(&a.dot(&b));
        let rhs = w.adjoint(&b).dot(&w.adjoint(&a));
        prop_assert!(rel_diff(&lhs, &rhs) < 1e-12);
    }
}
