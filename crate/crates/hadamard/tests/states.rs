use hadamard::basis::{make_basis, TimeGrid};
use hadamard::diagonalization::{build_frame, c_ref_blocks, local_frame};
use hadamard::evolution::{evolve_path, kg_path, ConstGenerator, EvolutionOptions, Path};
use hadamard::geometry::{reduce_to_model, End, Reduction, SpacetimeSpec};
use hadamard::linalg::{assemble, cr, eye, fro, inv, CMat, Weight, C64};
use hadamard::riccati::{solve_riccati, RiccatiOptions};
use hadamard::scenarios;
use hadamard::states::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn one(v: C64) -> CMat {
    Array2::from_elem((1, 1), v)
}

fn reduction(spec: &SpacetimeSpec, k: usize, span: (f64, f64)) -> Reduction {
    let b = make_basis(k, scenarios::TWO_PI).unwrap();
    Reduction::new(spec, &b, span).unwrap()
}

fn single_mode_path(eps: f64, stops: &[f64]) -> Path {
    let g = ConstGenerator(assemble(&one(cr(0.0)), &one(cr(1.0)), &one(cr(eps * eps)), &one(cr(0.0))));
    evolve_path(&g, 0.0, stops, &EvolutionOptions::adaptive(1e-13)).unwrap()
}

#[test]
fn single_mode_vacuum() {
    let w = Weight::identity(1);
    let c = vacuum_covariances(&one(cr(1.0)), &w, 0.0).unwrap();
    let h = |a: f64, b: f64, d: f64, e: f64| assemble(&one(cr(a)), &one(cr(b)), &one(cr(d)), &one(cr(e)));
    assert!(fro(&(&c.c_plus - &h(0.5, 0.5, 0.5, 0.5))) < 1e-15);
    assert!(fro(&(&c.c_minus - &h(0.5, -0.5, -0.5, 0.5))) < 1e-15);
    assert_eq!(c.tag, StateTag::Vac);
    assert!(fro(&(&c.c_plus.dot(&c.c_plus) - &c.c_plus)) <= 1e-12);
    assert!(fro(&(&c.lambda_plus - &h(0.5, 0.5, 0.5, 0.5))) < 1e-15);
}

#[test]
fn vacuum_residuals_on_the_bump() {
    let red = reduction(&scenarios::s1_bump(0.3), 12, (-2.0, 2.0));
    for end in [End::Future, End::Past] {
        let node = red.asymptotic_node(end).unwrap();
        let c = vacuum_of(&node, 0.0).unwrap();
        let r = validate_state(&c, &red.basis).unwrap();
        assert!(r.complementarity <= 1e-12 && r.idempotency <= 1e-10, "{r:?}");
        assert!(r.min_eig_lambda_plus >= -1e-10 && r.min_eig_lambda_minus >= -1e-10);
        assert!(r.pass);
        let f = vacuum_from_frame(&node.a, &node.weight, 0.0).unwrap();
        assert!(fro(&(&f.c_plus - &c.c_plus)) / fro(&c.c_plus) <= 1e-10);
        assert!(fro(&(&f.c_minus - &c.c_minus)) / fro(&c.c_minus) <= 1e-10);
    }
}

#[test]
fn negative_control_breaks_complementarity() {
    let red = reduction(&scenarios::s1_bump(0.3), 8, (-2.0, 2.0));
    let mut c = vacuum_of(&red.asymptotic_node(End::Future).unwrap(), 0.0).unwrap();
    let n2 = c.c_plus.nrows();
    c.c_plus = (&c.c_plus + &eye(n2).mapv(|z| z * 0.25)).mapv(|z| z * 0.5);
    let r = validate_state(&c, &red.basis).unwrap();
    assert!(!r.pass);
    assert!(r.complementarity > 0.1);
}

#[test]
fn ultrastatic_reference_is_the_vacuum() {
    let red = reduction(&scenarios::ultrastatic(), 8, (-2.0, 2.0));
    let model = reduce_to_model(&red, &TimeGrid::new(-2.0, 2.0, 41).unwrap()).unwrap();
    let sol = solve_riccati(&model, &RiccatiOptions::default()).unwrap();
    let frame = build_frame(&sol, &model).unwrap();
    let r = reference_covariances(&frame, 0.0).unwrap();
    let v = vacuum_of(&model.out, 0.0).unwrap();
    assert!(fro(&(&r.c_plus - &v.c_plus)) <= 1e-10);
    assert!(fro(&(&r.c_minus - &v.c_minus)) <= 1e-10);
    assert!(reference_covariances(&frame, 0.05).is_err());
    let h = hadamard_difference(&v, &r, &red.basis, (2, 8), P_THRESHOLD).unwrap();
    assert!(h.norm <= 1e-10 && h.pass, "{} {:?}", h.norm, h.p_per_block);
}

#[test]
fn reference_block_formula_and_complementarity() {
    let red = reduction(&scenarios::s1_bump(0.3), 12, (-3.0, 3.0));
    let model = reduce_to_model(&red, &TimeGrid::new(-3.0, 3.0, 121).unwrap()).unwrap();
    let sol = solve_riccati(&model, &RiccatiOptions::default()).unwrap();
    let frame = build_frame(&sol, &model).unwrap();
    let i = frame.grid.nearest(0.0);
    let r = reference_covariances(&frame, 0.0).unwrap();
    let x_inv = inv(&sol.gap_operator(i)).unwrap();
    let (bp, bm) = c_ref_blocks(&sol.b_plus.mats[i], &sol.b_minus.mats[i], &x_inv);
    assert!(fro(&(&bp - &r.c_plus)) / fro(&bp) <= 1e-10);
    assert!(fro(&(&bm - &r.c_minus)) / fro(&bm) <= 1e-10);
    assert!(fro(&(&(&r.c_plus + &r.c_minus) - &eye(r.c_plus.nrows()))) <= 1e-12);
    let v = validate_state(&r, &red.basis).unwrap();
    assert!(v.pass, "{v:?}");
    let same = hadamard_difference(&r, &r, &red.basis, (4, 12), P_THRESHOLD).unwrap();
    assert!(same.blocks.iter().all(|b| b.fit.is_exact()) && same.pass);
    let local = reference_from_local(&local_frame(&red, 0.0, 0.05, &RiccatiOptions::default()).unwrap());
    assert!(fro(&(&local.c_plus - &r.c_plus)) / fro(&r.c_plus) <= 1e-6);
}

#[test]
fn transport_identity_and_group_law() {
    let red = reduction(&scenarios::s1_bump(0.3), 6, (-3.0, 3.0));
    let opts = EvolutionOptions::adaptive(1e-11);
    let path = kg_path(&red, 0.0, &[-1.5, 1.0, 2.5], &opts).unwrap();
    let lf = local_frame(&red, 0.0, 0.05, &RiccatiOptions::default()).unwrap();
    let c = reference_from_local(&lf);
    let same = transport_covariances(&path, &c, 0.0, &lf.weight).unwrap();
    assert!(fro(&(&same.c_plus - &c.c_plus)) == 0.0);
    let w1 = red.weight_at(1.0).unwrap();
    let w25 = red.weight_at(2.5).unwrap();
    let once = transport_covariances(&path, &c, 2.5, &w25).unwrap();
    let mid = transport_covariances(&path, &c, 1.0, &w1).unwrap();
    let twice = transport_covariances(&path, &mid, 2.5, &w25).unwrap();
    let tol = 10.0 * opts.tol() * fro(&once.c_plus);
    assert!(fro(&(&once.c_plus - &twice.c_plus)) <= tol);
    let back = transport_covariances(&path, &once, 0.0, &lf.weight).unwrap();
    assert!(fro(&(&back.c_plus - &c.c_plus)) <= tol);
    let idem = |m: &CMat| charge_norm(&(&m.dot(m) - m), &red.basis).unwrap();
    assert!((idem(&once.c_plus) - idem(&c.c_plus)).abs() <= 1e3 * opts.tol());
    assert_eq!(once.tag, StateTag::Ref);
}

#[test]
fn z_family_on_flat_and_bump() {
    let red = reduction(&scenarios::s1_bump(0.3), 8, (-20.0, 20.0));
    let model = reduce_to_model(&red, &TimeGrid::new(-20.0, 20.0, 201).unwrap()).unwrap();
    let sol = solve_riccati(&model, &RiccatiOptions::default()).unwrap();
    let frame = build_frame(&sol, &model).unwrap();
    let z = build_z(&red, &frame, &model.out, &model.inn).unwrap();
    for (zt, tt) in z.z.iter().zip(&frame.t.mats) {
        assert_eq!(zt, tt);
    }
    assert!(z.inverse_defect() <= 1e-10);
    let approach: Vec<(f64, f64)> = z.approach(End::Future).into_iter().filter(|p| p.0 >= 5.0).collect();
    let fit = hadamard::basis::fit_time_decay(&approach, (5.0, 20.0)).unwrap();
    assert!(fit.exponent > 0.5, "{fit:?}");
}

#[test]
fn ultrastatic_scattering_is_stationary() {
    let red = reduction(&scenarios::ultrastatic(), 8, (-12.0, 12.0));
    let sc = scattering_covariances(&red, End::Future, &Samples::parse("2:10:5").unwrap(), &ScatteringOptions::default())
        .unwrap();
    assert!(sc.vacuum_trace.increments.iter().all(|&d| d <= 1e-10));
    let v = vacuum_of(&red.asymptotic_node(End::Future).unwrap(), 0.0).unwrap();
    assert!(fro(&(&sc.covariances.c_plus - &v.c_plus)) <= 1e-8);
    assert_eq!(sc.covariances.tag, StateTag::Out);
}

#[test]
fn bump_scattering_increments_decay() {
    let red = reduction(&scenarios::s1_bump(0.3), 8, (-41.0, 41.0));
    let sc = scattering_covariances(&red, End::Future, &Samples::parse("5:40:8").unwrap(), &ScatteringOptions::default())
        .unwrap();
    let fit = sc.vacuum_trace.fit.clone().unwrap();
    assert!(fit.exponent >= 1.5, "{fit:?}");
    let gap = sc.gap_fit.clone().unwrap();
    assert!(gap.exponent >= 1.5, "{gap:?}");
    let r = validate_state(&sc.covariances, &red.basis).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn samples_parse_and_spacing() {
    let s = Samples::parse("5:40:12").unwrap();
    let t = s.times(End::Future);
    assert_eq!(t.len(), 12);
    assert!((t[0] - 5.0).abs() < 1e-12 && (t[11] - 40.0).abs() < 1e-12);
    assert!(t.windows(3).all(|w| ((w[2] / w[1]) - (w[1] / w[0])).abs() < 1e-12));
    assert!(s.times(End::Past).iter().all(|&x| x < 0.0));
    assert!(Samples::parse("5:40").is_err());
    assert!(Samples::parse("40:5:12").is_err());
    assert!(Samples::parse("5:40:3").is_err());
}

#[test]
fn single_mode_two_point_and_propagator() {
    let eps = 1.7;
    let stops = [-1.3, -0.4, 0.8, 2.1];
    let path = single_mode_path(eps, &stops);
    let w = Weight::identity(1);
    let c = vacuum_covariances(&one(cr(eps * eps)), &w, 0.0).unwrap();
    for &t in &stops {
        for &s in &stops {
            let (lp, lm) = two_point(&c, &path, t, s, &w).unwrap();
            let want = C64::from_polar(1.0, -eps * (t - s)) / (2.0 * eps);
            assert!((lp[[0, 0]] - want).norm() <= 1e-9, "{t} {s}");
            assert!((lm[[0, 0]] - want.conj()).norm() <= 1e-9);
            let g = causal_propagator(&path, t, s, &w).unwrap();
            assert!((g[[0, 0]] - cr(-(eps * (t - s)).sin() / eps)).norm() <= 1e-9);
            assert!((&lp - &lm - g.mapv(|z| z * C64::new(0.0, 1.0)))[[0, 0]].norm() <= 1e-9);
        }
        assert!(causal_propagator(&path, t, t, &w).unwrap()[[0, 0]].norm() <= 1e-12);
    }
}

/// Max over nodes of ‖∂²_tΛ + r∂_tΛ + aΛ‖ relative to ‖Λ‖, with fourth-order stencils.
fn bi_solution_residual(red: &Reduction, kernel: impl Fn(f64) -> CMat, nodes: &[f64], h: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 2..nodes.len() - 2 {
        let k: Vec<CMat> = (-2..=2).map(|j| kernel(nodes[(i as i64 + j) as usize])).collect();
        let d1 = (&k[0] - &k[1] * 8.0 + &k[3] * 8.0 - &k[4]) / (12.0 * h);
        let d2 = (-&k[0] + &k[1] * 16.0 - &k[2] * 30.0 + &k[3] * 16.0 - &k[4]) / (12.0 * h * h);
        let node = red.node(nodes[i]).unwrap();
        let res = &d2 + &node.r.dot(&d1) + &node.a.dot(&k[2]);
        worst = worst.max(fro(&res) / fro(&k[2]).max(fro(&d2)));
    }
    worst
}

#[test]
fn two_point_structure_on_the_bump() {
    let red = reduction(&scenarios::s1_bump(0.3), 6, (-3.0, 3.0));
    let nodes: Vec<f64> = (0..201).map(|i| -1.0 + 2.0 * i as f64 / 200.0).collect();
    let h = nodes[1] - nodes[0];
    let path = kg_path(&red, 0.0, &nodes, &EvolutionOptions::adaptive(1e-12)).unwrap();
    let lf = local_frame(&red, 0.0, 0.05, &RiccatiOptions::default()).unwrap();
    let c = reference_from_local(&lf);
    let s = nodes[60];
    let w_s = red.weight_at(s).unwrap();
    for &t in &[nodes[10], nodes[100], nodes[170]] {
        let (lp, lm) = two_point(&c, &path, t, s, &w_s).unwrap();
        let g = causal_propagator(&path, t, s, &w_s).unwrap();
        let diff = &(&lp - &lm) - &g.mapv(|z| z * C64::new(0.0, 1.0));
        assert!(fro(&diff) <= 1e-8 * fro(&g).max(1.0));
        // G(s, t) = −G(t, s)†
        let w_t = red.weight_at(t).unwrap();
        let gr = causal_propagator(&path, s, t, &w_t).unwrap();
        assert!(fro(&(&gr + &hadamard::linalg::dagger(&g))) <= 1e-9 * fro(&g));
        // Λ⁺(t, s)† = Λ⁺(s, t)
        let (lp_r, _) = two_point(&c, &path, s, t, &w_t).unwrap();
        assert!(fro(&(&lp_r - &hadamard::linalg::dagger(&lp))) <= 1e-9 * fro(&lp));
    }
    assert!(fro(&causal_propagator(&path, s, s, &w_s).unwrap()) <= 1e-12);
    let plus = |t: f64| two_point(&c, &path, t, s, &w_s).unwrap().0;
    let minus = |t: f64| two_point(&c, &path, t, s, &w_s).unwrap().1;
    let rp = bi_solution_residual(&red, plus, &nodes, h);
    assert!(rp <= 1e-6, "{rp:e}");
    assert!(bi_solution_residual(&red, minus, &nodes, h) <= 1e-6);
}

#[test]
fn ultrastatic_two_point_is_diagonal() {
    let red = reduction(&scenarios::ultrastatic(), 5, (-2.0, 2.0));
    let path = kg_path(&red, 0.0, &[-0.7, 1.1], &EvolutionOptions::adaptive(1e-12)).unwrap();
    let c = vacuum_of(&red.asymptotic_node(End::Future).unwrap(), 0.0).unwrap();
    let w = red.weight_at(-0.7).unwrap();
    let (lp, _) = two_point(&c, &path, 1.1, -0.7, &w).unwrap();
    let want: Array1<C64> = red
        .basis
        .modes()
        .map(|m| {
            let e = (red.basis.wavenumber(m).powi(2) + 1.0).sqrt();
            C64::from_polar(1.0, -e * 1.8) / (2.0 * e)
        })
        .collect();
    assert!(fro(&(&lp - &Array2::from_diag(&want))) <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn vacuum_axioms_hold_for_random_positive_spectra(vals in proptest::collection::vec(0.1f64..50.0, 3)) {
        let a = Array2::from_diag(&Array1::from(vals.iter().map(|&v| cr(v)).collect::<Vec<_>>()));
        let c = vacuum_covariances(&a, &Weight::identity(3), 0.0).unwrap();
        let id = eye(6);
        prop_assert!(fro(&(&(&c.c_plus + &c.c_minus) - &id)) <= 1e-14);
        prop_assert!(fro(&(&c.c_plus.dot(&c.c_plus) - &c.c_plus)) <= 1e-12);
        prop_assert!(fro(&(&c.c_minus.dot(&c.c_minus) - &c.c_minus)) <= 1e-12);
        prop_assert!(hadamard::linalg::min_eig_herm(&hadamard::linalg::herm_part(&c.lambda_plus)).unwrap() >= -1e-12);
        prop_assert!(hadamard::linalg::min_eig_herm(&hadamard::linalg::herm_part(&c.lambda_minus)).unwrap() >= -1e-12);
    }

    #[test]
    fn sample_times_are_increasing(start in 0.5f64..10.0, ratio in 1.5f64..10.0, count in 5usize..20) {
        let s = Samples { start, stop: start * ratio, count };
        let t = s.times(End::Future);
        prop_assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
