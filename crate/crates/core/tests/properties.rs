use dnp_core::energy::energy_ledger;
use dnp_core::grid::{BoxDomain, ParabolicCylinder, SnapshotField, Trajectory};
use dnp_core::io::{DomainSpec, PotentialSpec, Profile, RunConfig, TimeSpec, TrajectoryFile};
use dnp_core::potentials::{legendre_dual_grad, Family, MatrixPotential, ScalarPotential};
use dnp_core::regularity::{greedy_cover_count, local_energy, parabolic_dimension, thresholds, SpaceTimePoint};
use dnp_core::stepper::{residual_norm, run_scheme, solve_step, step_functional, step_residual, SolverConfig};
use proptest::prelude::*;

fn chain(values: &[f64]) -> SnapshotField {
    let domain = BoxDomain::unit(1, values.len()).unwrap();
    SnapshotField::new(domain, 1, values.to_vec()).unwrap()
}

const SMALL: &str = r#"
[domain]
lo = [0.0]
hi = [1.0]
cells = [3]
[time]
horizon = 1.0
steps = 1
[potentials.psi]
family = "quadratic"
[potentials.f]
family = "quadratic"
[initial]
profile = "zero"
"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_round_trips(
        seed in 0u64..=i64::MAX as u64,
        cells in 3usize..200,
        horizon in 1e-3f64..10.0,
        steps in 1usize..1000,
        eps in 0.0f64..5.0,
        amplitude in -10.0f64..10.0,
    ) {
        let cfg = RunConfig {
            seed,
            output_dir: "runs/x".into(),
            domain: DomainSpec { lo: vec![-1.0], hi: vec![2.5], cells: vec![cells], components: 1 },
            time: TimeSpec { horizon, steps },
            potentials: PotentialSpec { psi: Family::SoftQuadratic { epsilon: eps }, f: Family::Quadratic },
            solver: SolverConfig::default(),
            initial: Profile::Sine { amplitude, mode: 2 },
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn seeds_beyond_toml_range_are_rejected(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut cfg = RunConfig::from_toml(SMALL).unwrap();
        cfg.seed = seed;
        prop_assert!(cfg.validate().is_err());
    }

    #[test]
    fn trajectory_files_are_lossless(values in prop::collection::vec(-1e6f64..1e6, 12), tau in 1e-6f64..1.0) {
        let domain = BoxDomain::unit(1, 3).unwrap();
        let snapshots: Vec<Vec<f64>> = values.chunks(3).map(<[f64]>::to_vec).collect();
        let traj = Trajectory::new(domain, 1, tau, snapshots).unwrap();
        let back = TrajectoryFile::decode(&TrajectoryFile::encode(&traj)).unwrap();
        prop_assert_eq!(back.snapshots, traj.snapshots);
        prop_assert_eq!(back.tau.to_bits(), traj.tau.to_bits());
    }

    #[test]
    fn legendre_inverts_gradient(w in prop::collection::vec(-10.0f64..10.0, 2), eps in 0.0f64..3.0) {
        let psi = ScalarPotential::soft_quadratic(2, eps).unwrap();
        let mut z = [0.0; 2];
        psi.gradient(&w, &mut z);
        let back = legendre_dual_grad(&psi, &z, 1e-11).unwrap();
        for (a, b) in back.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn step_is_a_minimizer(values in prop::collection::vec(-3.0f64..3.0, 3..12), tau in 1e-3f64..0.5, eps in 0.0f64..2.0) {
        let prev = chain(&values);
        let psi = ScalarPotential::soft_quadratic(1, eps).unwrap();
        let f = MatrixPotential::soft_quadratic(1, 1, eps).unwrap();
        let (v, _) = solve_step(&prev, tau, &psi, &f, &SolverConfig::default()).unwrap();
        let r = step_residual(&v, &prev, tau, &psi, &f).unwrap();
        prop_assert!(residual_norm(&v.domain, &r) <= 1e-10);
        let j = step_functional(&v, &prev, tau, &psi, &f).unwrap();
        prop_assert!(j <= step_functional(&prev, &prev, tau, &psi, &f).unwrap() + 1e-14);
    }

    #[test]
    fn first_identity_holds_for_random_data(values in prop::collection::vec(-2.0f64..2.0, 5..15), eps in 0.0f64..1.0) {
        let g = chain(&values);
        let psi = ScalarPotential::soft_quadratic(1, eps).unwrap();
        let f = MatrixPotential::soft_quadratic(1, 1, eps).unwrap();
        let traj = run_scheme(&g, &psi, &f, 6, 0.03, &SolverConfig::default()).unwrap();
        let ledger = energy_ledger(&traj, &psi, &f).unwrap();
        prop_assert!(ledger.entries.iter().all(|e| e.d_pass() && e.e_pass()));
        prop_assert!(ledger.telescoping_gap().abs() <= 1e-12 * (1.0 + ledger.entries[0].potential));
    }

    #[test]
    fn energy_ignores_affine_shifts(
        a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0,
        x0 in 0.3f64..0.7, r in 0.15f64..0.25,
    ) {
        let domain = BoxDomain::unit(1, 49).unwrap();
        let base = |x: f64, t: f64| (3.0 * x).sin() * (1.0 + t * t);
        let traj = Trajectory::from_fn(&domain, 1, 0.002, 50, |x, t, out| out[0] = base(x[0], t)).unwrap();
        let shifted = Trajectory::from_fn(&domain, 1, 0.002, 50, |x, t, out| {
            out[0] = base(x[0], t) + a + b * x[0] + c * t
        })
        .unwrap();
        let cyl = ParabolicCylinder::new(vec![x0], 0.05, r);
        let e0 = local_energy(&traj, &cyl).unwrap();
        let e1 = local_energy(&shifted, &cyl).unwrap();
        prop_assert!(e0.e >= 0.0);
        prop_assert!((e0.e - e1.e).abs() <= 1e-9 * (1.0 + e0.e));
    }

    #[test]
    fn cover_counts_are_monotone_and_bounded(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..0.1), 1..200),
    ) {
        let pts: Vec<SpaceTimePoint> = raw.iter().map(|&(x, t)| SpaceTimePoint::new(vec![x], t)).collect();
        let radii = [0.01, 0.02, 0.05, 0.1];
        let est = parabolic_dimension(&pts, &radii).unwrap();
        prop_assert!(est.counts.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(est.counts[0] <= pts.len());
        prop_assert!((0.0..=3.0).contains(&est.dimension));
        for r in radii {
            let c = greedy_cover_count(&pts, r);
            prop_assert!(c >= 1 && c <= pts.len());
        }
    }

    #[test]
    fn thresholds_stay_below_their_inputs(
        eps in 0.01f64..0.5, rho in 0.01f64..0.5, vartheta in 0.05f64..0.49,
        l in 0.1f64..100.0, gamma in 0.51f64..0.99, n in 1usize..4,
    ) {
        let p = thresholds(eps, rho, vartheta, l, gamma, n, 1.0).unwrap();
        prop_assert!(p.epsilon1 <= eps && p.epsilon1 > 0.0);
        prop_assert!(p.rho1 <= rho && p.rho1 > 0.0);
        prop_assert!(p.mu > 0.0 && p.mu < 0.5);
    }
}
