use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use dnp_core::grid::{BoxDomain, SnapshotField};
use dnp_core::potentials::{MatrixPotential, ScalarPotential};
use dnp_core::stepper::{
    interpolants, residual_norm, run_scheme, solve_step, step_functional, step_residual, SolverConfig,
};
use dnp_core::Error;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn single_node_closed_form() {
    for (h, tau) in [(0.1, 0.01), (0.25, 0.5), (0.05, 1e-4)] {
        let domain = BoxDomain::coarse(vec![0.0], vec![2.0 * h], vec![1]).unwrap();
        let prev = SnapshotField::new(domain, 1, vec![1.0]).unwrap();
        let (v, _) = solve_step(&prev, tau, &ScalarPotential::quadratic(1), &MatrixPotential::quadratic(1, 1), &cfg()).unwrap();
        assert_abs_diff_eq!(v.values[0], 1.0 / (1.0 + 2.0 * tau / (h * h)), epsilon = 1e-12);
    }
}

/// Quadratic potentials on a 3-node chain reduce each step to the
/// tridiagonal system `(I + tau/h^2 T) v = v_prev`, solved here by Cramer's rule.
#[test]
fn three_node_quadratic_step_matches_linear_solve() {
    let (h, tau) = (0.1, 0.02);
    let domain = BoxDomain::new(vec![0.0], vec![0.4], vec![3]).unwrap();
    let prev = SnapshotField::new(domain, 1, vec![0.3, -1.0, 2.0]).unwrap();
    let (v, _) = solve_step(&prev, tau, &ScalarPotential::quadratic(1), &MatrixPotential::quadratic(1, 1), &cfg()).unwrap();
    let s = tau / (h * h);
    let a = [[1.0 + 2.0 * s, -s, 0.0], [-s, 1.0 + 2.0 * s, -s], [0.0, -s, 1.0 + 2.0 * s]];
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    for i in 0..3 {
        let mut ai = a;
        for r in 0..3 {
            ai[r][i] = prev.values[r];
        }
        assert_abs_diff_eq!(v.values[i], det(ai) / d, epsilon = 1e-11);
    }
}

#[test]
fn two_dimensional_eigenmode_decays_by_discrete_factor() {
    let cells = 15;
    let domain = BoxDomain::unit(2, cells).unwrap();
    let g = SnapshotField::from_fn(&domain, 1, |x, out| out[0] = (PI * x[0]).sin() * (PI * x[1]).sin());
    let (steps, horizon) = (10, 0.05);
    let traj = run_scheme(&g, &ScalarPotential::quadratic(1), &MatrixPotential::quadratic(1, 2), steps, horizon, &cfg()).unwrap();
    let h = domain.h(0);
    let tau = horizon / steps as f64;
    // Corner-averaged one-sided differences count every lattice edge twice
    // with weight 1/2, which is the five-point Laplacian.
    let node = domain.node_index(&[7, 7]);
    let ratio = traj.snapshots[1][node] / traj.snapshots[0][node];
    for k in 1..=steps {
        for (a, b) in traj.snapshots[k].iter().zip(&traj.snapshots[0]) {
            assert_abs_diff_eq!(*a, ratio.powi(k as i32) * b, epsilon = 1e-9);
        }
    }
    let s = (PI * h / 2.0).sin().powi(2) * 4.0 / (h * h);
    let lambda = 2.0 * s;
    assert_abs_diff_eq!(ratio, 1.0 / (1.0 + tau * lambda), epsilon = 1e-9);
}

#[test]
fn zero_datum_stays_zero() {
    let domain = BoxDomain::unit(1, 9).unwrap();
    let g = SnapshotField::zeros(&domain, 2);
    let psi = ScalarPotential::soft_quadratic(2, 0.5).unwrap();
    let f = MatrixPotential::soft_quadratic(2, 1, 0.5).unwrap();
    let traj = run_scheme(&g, &psi, &f, 5, 0.1, &cfg()).unwrap();
    assert!(traj.snapshots.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn step_minimizes_functional_and_meets_tolerance() {
    let domain = BoxDomain::unit(1, 20).unwrap();
    let prev = SnapshotField::from_fn(&domain, 1, |x, out| out[0] = x[0] * (1.0 - x[0]) * 8.0);
    let psi = ScalarPotential::soft_quadratic(1, 0.5).unwrap();
    let f = MatrixPotential::soft_quadratic(1, 1, 0.5).unwrap();
    let tau = 0.01;
    let (v, report) = solve_step(&prev, tau, &psi, &f, &cfg()).unwrap();
    let r = step_residual(&v, &prev, tau, &psi, &f).unwrap();
    assert!(residual_norm(&domain, &r) <= 1e-10);
    assert!(report.residual <= 1e-10);
    assert!(report.functional.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    let j = step_functional(&v, &prev, tau, &psi, &f).unwrap();
    for i in 0..v.values.len() {
        for delta in [-1e-3, 1e-3] {
            let mut p = v.clone();
            p.values[i] += delta;
            assert!(step_functional(&p, &prev, tau, &psi, &f).unwrap() >= j);
        }
    }
}

#[test]
fn solver_failure_reports_step_index() {
    let domain = BoxDomain::unit(1, 30).unwrap();
    let g = SnapshotField::from_fn(&domain, 1, |x, out| out[0] = (PI * x[0]).sin());
    let tight = SolverConfig { max_newton: 1, tol: 1e-15, ..SolverConfig::default() };
    let psi = ScalarPotential::soft_quadratic(1, 0.5).unwrap();
    let f = MatrixPotential::soft_quadratic(1, 1, 0.5).unwrap();
    match run_scheme(&g, &psi, &f, 3, 0.1, &tight) {
        Err(Error::Step { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a step failure, got {other:?}"),
    }
}

#[test]
fn interpolants_agree_at_grid_times() {
    let domain = BoxDomain::unit(1, 9).unwrap();
    let g = SnapshotField::from_fn(&domain, 1, |x, out| out[0] = (PI * x[0]).sin());
    let traj = run_scheme(&g, &ScalarPotential::quadratic(1), &MatrixPotential::quadratic(1, 1), 4, 0.04, &cfg()).unwrap();
    let (pc, pl) = interpolants(&traj, 0.02).unwrap();
    assert_eq!(pc.values, traj.snapshots[2]);
    for (a, b) in pl.values.iter().zip(&traj.snapshots[2]) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
    let (pc, pl) = interpolants(&traj, 0.015).unwrap();
    assert_eq!(pc.values, traj.snapshots[2]);
    for i in 0..pl.values.len() {
        let mid = 0.5 * (traj.snapshots[1][i] + traj.snapshots[2][i]);
        assert_abs_diff_eq!(pl.values[i], mid, epsilon = 1e-14);
    }
    assert!(interpolants(&traj, 0.5).is_err());
}
