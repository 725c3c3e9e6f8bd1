use approx::assert_abs_diff_eq;
use dnp_core::grid::{BoxDomain, ParabolicCylinder, Quantity, Trajectory};
use dnp_core::regularity::{
    backwards_decay_check, decay_classification, fractional_quotient_exponent, gagliardo_time_seminorm,
    greedy_cover_count, higher_integrability_report, local_energy, p_for_dimension, parabolic_dimension,
    singular_candidates, thresholds, DecayFlag, SpaceTimePoint, SpaceTimeRegion,
};
use dnp_core::Error;

fn field(cells: usize, steps: usize, horizon: f64, f: impl Fn(f64, f64) -> f64) -> Trajectory {
    let domain = BoxDomain::unit(1, cells).unwrap();
    Trajectory::from_fn(&domain, 1, horizon / steps as f64, steps, |x, t, out| out[0] = f(x[0], t)).unwrap()
}

#[test]
fn affine_fields_have_zero_energy() {
    let traj = field(49, 50, 0.1, |x, t| 0.3 + 2.0 * x - 5.0 * t + 0.5 * x * x);
    let e = local_energy(&traj, &ParabolicCylinder::new(vec![0.5], 0.05, 0.2)).unwrap();
    assert!(e.e.abs() < 1e-20, "{e:?}");
}

/// `v = t x^2`: the stencils are exact, so `v_t = x^2`, `Dv = 2 t x`,
/// `D^2 v = 2 t` and the three terms reduce to sample variances.
#[test]
fn energy_terms_match_hand_computation() {
    let (cells, steps, horizon) = (39, 40, 0.2);
    let traj = field(cells, steps, horizon, |x, t| t * x * x);
    let (x0, t0, r) = (0.5, 0.1, 0.2);
    let h = 1.0 / (cells + 1) as f64;
    let tau = horizon / steps as f64;
    let xs: Vec<f64> = (1..=cells).map(|i| i as f64 * h).filter(|y| (y - x0).abs() < r).collect();
    let ts: Vec<f64> = (1..=steps).map(|k| k as f64 * tau).filter(|s| (s - t0).abs() < r * r / 2.0).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let t1 = var(&xs.iter().map(|y| y * y).collect::<Vec<_>>());
    let t3 = var(&ts.iter().map(|s| 2.0 * s).collect::<Vec<_>>());
    let mean_dv = mean(&ts.iter().flat_map(|s| xs.iter().map(move |y| 2.0 * s * y)).collect::<Vec<_>>());
    let mean_d2v = 2.0 * mean(&ts);
    let mut t2 = 0.0;
    for s in &ts {
        for y in &xs {
            t2 += ((2.0 * s * y - mean_dv - mean_d2v * (y - x0)) / r).powi(2);
        }
    }
    t2 /= (xs.len() * ts.len()) as f64;

    let e = local_energy(&traj, &ParabolicCylinder::new(vec![x0], t0, r)).unwrap();
    assert_abs_diff_eq!(e.t1, t1, epsilon = 1e-12);
    assert_abs_diff_eq!(e.t2, t2, epsilon = 1e-12);
    assert_abs_diff_eq!(e.t3, t3, epsilon = 1e-12);
}

#[test]
fn inadmissible_cylinders_are_geometry_errors() {
    let traj = field(19, 20, 0.1, |x, t| x * t);
    for cyl in [
        ParabolicCylinder::new(vec![0.1], 0.05, 0.2),
        ParabolicCylinder::new(vec![0.5], 0.01, 0.2),
        ParabolicCylinder::new(vec![0.5], 0.05, 0.05),
        ParabolicCylinder::new(vec![0.5, 0.5], 0.05, 0.2),
    ] {
        assert!(matches!(local_energy(&traj, &cyl), Err(Error::Geometry(_))), "{cyl:?}");
    }
}

#[test]
fn threshold_windows() {
    let cap = 0.5;
    assert!(thresholds(cap, cap, 0.25, 10.0, 0.75, 1, 1.0).is_ok());
    assert!(thresholds(0.6, 0.5, 0.25, 10.0, 0.75, 1, 1.0).is_err());
    assert!(thresholds(0.1, 0.5, 0.25, 10.0, 0.5, 1, 1.0).is_err());
    assert!(thresholds(0.1, 0.5, 0.0, 10.0, 0.75, 1, 1.0).is_err());
    assert!(thresholds(0.1, 0.5, 0.25, 10.0, 0.75, 1, 1.5).is_err());
    let p = thresholds(0.1, 0.5, 0.25, 10.0, 0.75, 1, 1.0).unwrap();
    assert_eq!(p.epsilon1, 0.1);
    let rho1 = (0.25f64.powi(8) * 0.01 / 240.0).powf(1.0 / 1.5);
    assert_abs_diff_eq!(p.rho1, rho1, epsilon = 1e-18);
    assert_eq!(p.mu, 0.25);
}

#[test]
fn small_smooth_field_is_regular() {
    let params = thresholds(0.1, 0.5, 0.25, 10.0, 0.75, 1, 1.0).unwrap();
    let traj = field(99, 100, 0.05, |x, t| 0.1 * t * x * x);
    let ev = decay_classification(&traj, &[0.5], 0.025, 0.2, &params, 1).unwrap();
    assert_eq!(ev.flag, DecayFlag::Regular, "{ev:?}");
    assert_eq!(ev.checked, 1);
    assert!(!ev.below_rho1);

    let ev = decay_classification(&traj, &[0.5], 0.025, 0.2, &params, 3).unwrap();
    assert!(ev.truncated);
    assert_eq!(ev.flag, DecayFlag::Regular);
}

#[test]
fn large_fields_fail_the_entry_condition() {
    let params = thresholds(0.1, 0.5, 0.25, 10.0, 0.75, 1, 1.0).unwrap();
    let traj = field(99, 100, 0.05, |x, t| 100.0 * t * x);
    let ev = decay_classification(&traj, &[0.5], 0.025, 0.2, &params, 1).unwrap();
    assert_eq!(ev.flag, DecayFlag::Unverified);
    assert!(ev.reason.unwrap().contains("entry"));
}

#[test]
fn backwards_decay_holds_for_quadratic_field() {
    let traj = field(99, 100, 0.1, |x, t| (1.0 + t) * x * (1.0 - x));
    let check = backwards_decay_check(&traj, &ParabolicCylinder::new(vec![0.5], 0.05, 0.25), 0.5).unwrap();
    assert!(check.pass, "{check:?}");
    assert_eq!(check.constant, 3072.0);
}

/// For `v = t^2` the backward difference is `2 t - tau`, so every shift
/// by `h` changes `v_t` by exactly `2 h`.
#[test]
fn difference_quotients_of_quadratic_time_profile() {
    let (steps, horizon) = (100, 0.1);
    let traj = field(19, steps, horizon, |_, t| t * t);
    let region = SpaceTimeRegion { lo: vec![0.25], hi: vec![0.75], t0: 0.03, t1: 0.06 };
    let tau = horizon / steps as f64;
    let hs = [tau, 2.0 * tau, 4.0 * tau];
    let fq = fractional_quotient_exponent(&traj, Quantity::Vt, &region, &hs).unwrap();
    let nodes = (1..=19).filter(|i| (0.25..=0.75).contains(&(*i as f64 / 20.0))).count() as f64;
    let levels = (1..=steps).filter(|k| (0.03 - 1e-12..=0.06 + 1e-12).contains(&(*k as f64 * tau))).count() as f64;
    for (h, d) in hs.iter().zip(&fq.values) {
        assert_abs_diff_eq!(*d, 4.0 * h * h * nodes * levels * 0.05 * tau, epsilon = 1e-15);
    }
    assert_abs_diff_eq!(fq.slope, 2.0, epsilon = 1e-9);

    let bad = [tau, 0.02];
    assert!(matches!(fractional_quotient_exponent(&traj, Quantity::Vt, &region, &bad), Err(Error::Config { .. })));
    assert!(fractional_quotient_exponent(&traj, Quantity::Dv, &region, &hs).is_err());
}

#[test]
fn seminorm_and_integrability_are_finite() {
    let traj = field(39, 100, 0.1, |x, t| (t + 1.0).ln() * (3.0 * x).sin());
    let region = SpaceTimeRegion { lo: vec![0.2], hi: vec![0.8], t0: 0.02, t1: 0.08 };
    let s = gagliardo_time_seminorm(&traj, Quantity::Vt, 0.2, &region, 1.0).unwrap();
    assert!(s.is_finite() && s > 0.0);
    assert!(gagliardo_time_seminorm(&traj, Quantity::Vt, 0.3, &region, 1.0).is_err());
    let report = higher_integrability_report(&traj, &region).unwrap();
    assert_eq!(report.p, 4.0);
    let (a, b) = report.ratios();
    assert!(a > 0.0 && b > 0.0);
    assert_eq!(p_for_dimension(2), 3.9);
    assert_eq!(p_for_dimension(3), 2.0 + 4.0 / 3.0);
}

#[test]
fn dimension_handles_edge_cases() {
    let radii = [0.01, 0.03, 0.1];
    let empty = parabolic_dimension(&[], &radii).unwrap();
    assert!(empty.empty);
    assert_eq!(empty.dimension, 0.0);
    let one = parabolic_dimension(&[SpaceTimePoint::new(vec![0.5], 0.1)], &radii).unwrap();
    assert_eq!(one.dimension, 0.0);
    assert_eq!(one.counts, vec![1, 1, 1]);
    assert!(parabolic_dimension(&[], &[0.01, 0.05]).is_err());
    assert!(parabolic_dimension(&[], &[0.01, 0.02, 0.05]).is_err());
    let mixed = [SpaceTimePoint::new(vec![0.5], 0.1), SpaceTimePoint::new(vec![0.5, 0.5], 0.1)];
    assert!(parabolic_dimension(&mixed, &radii).is_err());
}

#[test]
fn greedy_cover_respects_parabolic_scaling() {
    // Points spaced r in time at one location need one cylinder per r^2/2.
    let r = 0.1;
    let pts: Vec<SpaceTimePoint> = (0..50).map(|k| SpaceTimePoint::new(vec![0.0], k as f64 * r)).collect();
    assert_eq!(greedy_cover_count(&pts, r), 50);
    let dense: Vec<SpaceTimePoint> = (0..50).map(|k| SpaceTimePoint::new(vec![0.0], k as f64 * 1e-4)).collect();
    assert_eq!(greedy_cover_count(&dense, r), 1);
}

#[test]
fn candidates_use_energy_threshold() {
    let traj = field(99, 100, 0.1, |x, t| t * x * x);
    let centers = [SpaceTimePoint::new(vec![0.5], 0.05), SpaceTimePoint::new(vec![0.3], 0.05)];
    let all = singular_candidates(&traj, &centers, 0.2, -1.0, None).unwrap();
    assert_eq!(all.len(), 2);
    assert!(singular_candidates(&traj, &centers, 0.2, 1e6, None).unwrap().is_empty());
    assert_eq!(singular_candidates(&traj, &centers, 0.2, 1e6, Some(0.0)).unwrap().len(), 2);
}
