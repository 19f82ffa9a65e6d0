use std::f64::consts::PI;

use hadamard::basis::{make_basis, TimeGrid};
use hadamard::geometry::{
    check_positivity, reduce_to_model, step_profile, verify_td_decay, Coefficient, Factor,
    Reduction, SpacetimeSpec, TimeProfile,
};
use hadamard::linalg::{cr, eye, fro, max_abs, min_eig_herm};
use hadamard::scenarios;
use hadamard::Error;

fn model(spec: &SpacetimeSpec, k: usize, grid: TimeGrid) -> hadamard::Result<hadamard::geometry::ModelCoefficients> {
    let basis = make_basis(k, spec.length)?;
    let red = Reduction::new(spec, &basis, (grid.t_min, grid.t_max))?;
    reduce_to_model(&red, &grid)
}

#[test]
fn ultrastatic_model_is_diagonal() {
    let grid = TimeGrid::new(-2.0, 2.0, 9).unwrap();
    let m = model(&scenarios::ultrastatic(), 6, grid).unwrap();
    for i in 0..grid.n_nodes {
        for (j, k) in (-6i64..=6).enumerate() {
            assert!((m.a.mats[i][[j, j]] - cr((k * k) as f64 + 1.0)).norm() < 1e-12);
        }
        assert!(fro(&(m.a.mats[i].clone() - hadamard::linalg::diag_real((-6i64..=6).map(|k| (k * k) as f64 + 1.0)))) < 1e-12);
        assert!(max_abs(&m.r.mats[i]) < 1e-15);
    }
    assert!((m.m2 - 1.0).abs() < 1e-12);
}

#[test]
fn conformal_factor_matches_closed_form() {
    let grid = TimeGrid::new(-3.0, 3.0, 13).unwrap();
    let m = model(&scenarios::conformal_step(), 5, grid).unwrap();
    for i in 0..grid.n_nodes {
        let t = grid.node(i);
        let s = step_profile(t);
        let sdot = 0.5 / (1.0 + t * t).powf(1.5);
        for (j, k) in (-5i64..=5).enumerate() {
            let want = (-2.0 * s).exp() * (k * k) as f64 + 1.0;
            assert!((m.a.mats[i][[j, j]].re - want).abs() < 1e-10);
        }
        let r = &m.r.mats[i];
        assert!(fro(&(r - &(eye(11) * cr(sdot)))) < 1e-9, "t = {t}");
    }
    let k = 3usize;
    let idx = 5 + k;
    assert!((m.out.a[[idx, idx]].re - ((-2.0f64).exp() * 9.0 + 1.0)).abs() < 1e-12);
    assert!((m.inn.a[[idx, idx]].re - 10.0).abs() < 1e-12);
}

#[test]
fn weighted_self_adjointness_on_bump() {
    let grid = TimeGrid::new(-5.0, 5.0, 21).unwrap();
    let m = model(&scenarios::s1_bump(0.3), 16, grid).unwrap();
    assert!(m.self_adjoint_residual() < 1e-10);
}

#[test]
fn positivity_checks() {
    let grid = TimeGrid::new(-1.0, 1.0, 9).unwrap();
    let mut spec = scenarios::ultrastatic();
    spec.v = Coefficient::product(vec![Factor::CosBump {
        amplitude: 0.5,
        mode: 1,
        time_profile: TimeProfile::InversePower { delta: 0.0 },
    }]);
    let m = model(&spec, 12, grid).unwrap();
    let dense = min_eig_herm(&m.out.a).unwrap();
    assert!(m.m2 > 0.5 && m.m2 <= 1.0);
    assert!((m.m2 - dense).abs() < 1e-12);
    assert!((check_positivity(&m).unwrap() - m.m2).abs() < 1e-15);

    spec.v = Coefficient::constant(-1.0);
    assert!(matches!(model(&spec, 12, grid), Err(Error::PositivityViolated { .. })));
}

#[test]
fn decay_rates_of_model_coefficients() {
    let grid = TimeGrid::new(-40.0, 40.0, 161).unwrap();
    let ultra = model(&scenarios::ultrastatic(), 8, grid).unwrap();
    let td = verify_td_decay(&ultra, (5.0, 40.0)).unwrap();
    assert!(td.a_decay.is_exact() && td.r_decay.is_exact());

    let bump = model(&scenarios::s1_bump(0.3), 8, grid).unwrap();
    let td = verify_td_decay(&bump, (5.0, 40.0)).unwrap();
    assert!((td.a_decay.exponent - 2.0).abs() < 0.1, "{:?}", td.a_decay);
    assert!(td.a_ok && td.r_ok, "{td:?}");

    let slow = model(&scenarios::s1_bump_with_tail(0.3, 0.2, 0.5), 8, grid).unwrap();
    assert!((slow.rates.delta - 0.5).abs() < 1e-15);
    let td = verify_td_decay(&slow, (5.0, 40.0)).unwrap();
    assert!((td.a_decay.exponent - 0.5).abs() < 0.1, "{:?}", td.a_decay);
}

#[test]
fn static_coefficients_give_constant_model() {
    let mut spec = scenarios::s1_bump(0.3);
    spec.h.factors.remove(0);
    let grid = TimeGrid::new(-3.0, 3.0, 9).unwrap();
    let m = model(&spec, 10, grid).unwrap();
    for i in 0..grid.n_nodes {
        assert!(max_abs(&m.r.mats[i]) < 1e-12);
        assert!(max_abs(&(&m.a.mats[i] - &m.a.mats[0])) < 1e-12);
    }
}

#[test]
fn negligible_shift_matches_unshifted_reduction() {
    let grid = TimeGrid::new(-2.0, 2.0, 9).unwrap();
    let plain = model(&scenarios::s1_bump(0.3), 8, grid).unwrap();
    let shifted = model(&scenarios::s1_bump_shifted(0.3, 1e-15, 2.0), 8, grid).unwrap();
    for i in 0..grid.n_nodes {
        assert!(fro(&(&plain.a.mats[i] - &shifted.a.mats[i])) < 1e-12 * fro(&plain.a.mats[i]));
    }
}

#[test]
fn shifted_reduction_stays_self_adjoint() {
    let grid = TimeGrid::new(-3.0, 3.0, 13).unwrap();
    let m = model(&scenarios::s1_bump_shifted(0.3, 0.2, 2.0), 12, grid).unwrap();
    assert!(m.self_adjoint_residual() < 1e-10);
    assert!(m.m2 > 0.0);
}

#[test]
fn invalid_geometry_rejected() {
    let mut spec = scenarios::ultrastatic();
    spec.c = Coefficient::constant(-1.0);
    let grid = TimeGrid::new(-1.0, 1.0, 9).unwrap();
    assert!(matches!(model(&spec, 4, grid), Err(Error::InvalidGeometry(_))));
    let _ = PI;
}
