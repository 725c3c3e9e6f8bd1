use approx::assert_abs_diff_eq;
use dnp_core::potentials::{
    dual_at_gradient, hessian_holder_estimate, legendre_dual_grad, legendre_value, normalize_matrix, normalize_scalar,
    verify_bounds, Family, MatrixPotential, ScalarPotential,
};
use dnp_core::Error;

/// Soft-quadratic value written from its definition.
fn soft(w: &[f64], eps: f64) -> f64 {
    let q: f64 = w.iter().map(|x| x * x).sum();
    0.5 * q + eps * ((1.0 + q).sqrt() - 1.0)
}

#[test]
fn soft_quadratic_value_and_gradient_match_definition() {
    let psi = ScalarPotential::soft_quadratic(2, 0.5).unwrap();
    for w in [[0.0, 0.0], [0.3, -1.2], [4.0, 7.5], [1e-5, 2e-5]] {
        assert_abs_diff_eq!(psi.value(&w), soft(&w, 0.5), epsilon = 1e-13);
        let mut g = [0.0; 2];
        psi.gradient(&w, &mut g);
        for a in 0..2 {
            let mut p = w;
            let mut q = w;
            p[a] += 1e-6;
            q[a] -= 1e-6;
            let fd = (soft(&p, 0.5) - soft(&q, 0.5)) / 2e-6;
            assert_abs_diff_eq!(g[a], fd, epsilon = 1e-7);
        }
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let f = MatrixPotential::soft_quadratic(1, 2, 0.5).unwrap();
    let m = [0.7, -0.4];
    let mut h = [0.0; 4];
    f.hessian(&m, &mut h);
    for b in 0..2 {
        let (mut p, mut q) = (m, m);
        p[b] += 1e-6;
        q[b] -= 1e-6;
        let (mut gp, mut gq) = ([0.0; 2], [0.0; 2]);
        f.gradient(&p, &mut gp);
        f.gradient(&q, &mut gq);
        for a in 0..2 {
            assert_abs_diff_eq!(h[a * 2 + b], (gp[a] - gq[a]) / 2e-6, epsilon = 1e-7);
        }
    }
}

#[test]
fn quadratic_dual_is_half_square() {
    let psi = ScalarPotential::quadratic(3);
    let z = [1.5, -2.0, 0.25];
    let w = legendre_dual_grad(&psi, &z, 1e-12).unwrap();
    for (a, b) in w.iter().zip(&z) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    let half: f64 = z.iter().map(|x| x * x).sum::<f64>() / 2.0;
    assert_abs_diff_eq!(legendre_value(&psi, &z, 1e-12).unwrap(), half, epsilon = 1e-12);
}

/// In 1D the soft-quadratic gradient is increasing, so bisection inverts it.
fn bisect_inverse(z: f64, eps: f64) -> f64 {
    let g = |w: f64| w * (1.0 + eps / (1.0 + w * w).sqrt());
    let (mut lo, mut hi) = (-z.abs() - 1.0, z.abs() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < z {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn soft_quadratic_dual_matches_bisection() {
    let psi = ScalarPotential::soft_quadratic(1, 0.5).unwrap();
    for z in [-12.0, -1.0, 0.0, 0.3, 2.5, 40.0] {
        let w = legendre_dual_grad(&psi, &[z], 1e-12).unwrap()[0];
        let oracle = bisect_inverse(z, 0.5);
        assert_abs_diff_eq!(w, oracle, epsilon = 1e-10);
        let conj = z * oracle - soft(&[oracle], 0.5);
        assert_abs_diff_eq!(legendre_value(&psi, &[z], 1e-12).unwrap(), conj, epsilon = 1e-10);
        assert_abs_diff_eq!(dual_at_gradient(&psi, &[oracle]), conj, epsilon = 1e-10);
    }
}

#[test]
fn built_in_families_certify_and_planted_bounds_fail() {
    for family in [Family::Quadratic, Family::SoftQuadratic { epsilon: 0.5 }, Family::SoftQuadratic { epsilon: 0.0 }] {
        let psi = ScalarPotential::from_family(&family, 2).unwrap();
        assert!(verify_bounds(&psi, 300, 5.0, 1).unwrap().passed(), "{family:?}");
        let f = MatrixPotential::from_family(&family, 2, 2).unwrap();
        assert!(verify_bounds(&f, 300, 5.0, 2).unwrap().passed(), "{family:?}");
    }
    let planted = ScalarPotential::quadratic(1).with_bounds(1.1, 1.1).unwrap();
    let report = verify_bounds(&planted, 100, 1.0, 3).unwrap();
    let violation = report.violation.expect("declared theta above the true value must be caught");
    assert!(!violation.witness.is_empty());
    assert!(violation.ratio < 1.1);
    let too_small = ScalarPotential::soft_quadratic(1, 0.5).unwrap().with_bounds(1.0, 1.2).unwrap();
    assert!(!verify_bounds(&too_small, 300, 1.0, 4).unwrap().passed());
}

#[test]
fn anisotropic_family_checks_shape_and_symmetry() {
    let bad = Family::AnisotropicQuadratic { matrix: vec![1.0, 0.2, 0.3, 1.0], lower: 0.5, upper: 2.0 };
    assert!(matches!(ScalarPotential::from_family(&bad, 2), Err(Error::Config { .. })));
    let short = Family::AnisotropicQuadratic { matrix: vec![1.0], lower: 0.5, upper: 2.0 };
    assert!(matches!(ScalarPotential::from_family(&short, 2), Err(Error::Config { .. })));
}

#[test]
fn normalization_moves_minimum_to_origin() {
    let psi = ScalarPotential::quadratic(1);
    let (same, a) = normalize_scalar(&psi).unwrap();
    assert_eq!(a, vec![0.0]);
    assert_eq!(same.value(&[2.0]), 2.0);
    let f = normalize_matrix(&MatrixPotential::quadratic(1, 1));
    assert_eq!(f.value(&[0.0]), 0.0);
}

#[test]
fn quadratic_hessian_is_constant() {
    let f = MatrixPotential::quadratic(1, 2);
    let est = hessian_holder_estimate(&f, 64, 9).unwrap();
    assert!(est.certifies(1.0));
}

#[test]
fn smooth_hessian_is_lipschitz() {
    let f = MatrixPotential::soft_quadratic(1, 2, 0.5).unwrap();
    let est = hessian_holder_estimate(&f, 200, 10).unwrap();
    assert!(est.alpha_hat > 0.95, "{est:?}");
}
