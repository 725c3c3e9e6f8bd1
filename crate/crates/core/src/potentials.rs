//! Convex nonlinearities `psi` (acting on time derivatives) and `F` (acting on
//! spatial gradients), their normalization, Legendre duals and sampling-based
//! certification of the declared convexity constants.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARMIJO_FACTOR: f64 = 0.5;
const ARMIJO_SLOPE: f64 = 1e-4;
const NEWTON_CAP: usize = 200;
const CERT_SLACK: f64 = 1e-9;

/// Value, gradient and Hessian of a smooth function on `R^dim`.
///
/// Matrix arguments are flattened row-major, so an `m x n` matrix has
/// `dim = m * n` and entry `(i, j)` at `i * n + j`. Hessians are written
/// row-major as `dim x dim`.
pub trait Evaluator: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// `1/2 |x|^2`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub dim: usize,
}

impl Evaluator for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        identity_into(self.dim, out);
    }
}

/// `1/2 |x|^2 + eps (sqrt(1 + |x|^2) - 1)`, with Hessian eigenvalues in `(1, 1 + eps]`.
#[derive(Debug, Clone)]
pub struct SoftQuadratic {
    pub dim: usize,
    pub epsilon: f64,
}

impl Evaluator for SoftQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        let q = dot(x, x);
        // sqrt(1+q) - 1 written to avoid cancellation for small q
        0.5 * q + self.epsilon * q / ((1.0 + q).sqrt() + 1.0)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = (1.0 + dot(x, x)).sqrt();
        let c = 1.0 + self.epsilon / s;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let s = (1.0 + dot(x, x)).sqrt();
        let s3 = s * s * s;
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = delta * (1.0 + self.epsilon / s) - self.epsilon * x[i] * x[j] / s3;
            }
        }
    }
}

/// `1/2 <A x, x>` for a symmetric matrix `A`.
#[derive(Debug, Clone)]
pub struct AnisotropicQuadratic {
    pub dim: usize,
    pub matrix: Vec<f64>,
}

impl Evaluator for AnisotropicQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim];
        self.gradient(x, &mut ax);
        0.5 * dot(&ax, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum();
        }
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
}

/// `w -> inner(w + shift) - inner(shift)`.
struct Shifted {
    inner: Arc<dyn Evaluator>,
    shift: Vec<f64>,
    base: f64,
}

impl Shifted {
    fn moved(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }
}

impl Evaluator for Shifted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&self.moved(x)) - self.base
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(&self.moved(x), out)
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        self.inner.hessian(&self.moved(x), out)
    }
}

/// `M -> inner(M) - c0 - g0 . M`.
struct Tilted {
    inner: Arc<dyn Evaluator>,
    c0: f64,
    g0: Vec<f64>,
}

impl Evaluator for Tilted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) - self.c0 - dot(&self.g0, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out);
        for (o, g) in out.iter_mut().zip(&self.g0) {
            *o -= g;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        self.inner.hessian(x, out)
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Evaluator assembled from user closures.
pub struct Custom {
    dim: usize,
    value: Box<ValueFn>,
    gradient: Box<VectorFn>,
    hessian: Box<VectorFn>,
}

impl Custom {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Custom {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
        }
    }
}

impl Evaluator for Custom {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        (self.hessian)(x, out)
    }
}

/// Built-in potential families, selectable by name in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    Quadratic,
    SoftQuadratic {
        epsilon: f64,
    },
    /// `matrix` is row-major and symmetric; `lower`/`upper` are the declared
    /// eigenvalue bounds.
    AnisotropicQuadratic {
        matrix: Vec<f64>,
        lower: f64,
        upper: f64,
    },
}

impl Family {
    fn build(&self, dim: usize) -> Result<(Arc<dyn Evaluator>, f64, f64)> {
        match self {
            Family::Quadratic => Ok((Arc::new(Quadratic { dim }), 1.0, 1.0)),
            Family::SoftQuadratic { epsilon } => {
                if !(epsilon.is_finite() && *epsilon >= 0.0) {
                    return Err(Error::config("epsilon", "must be finite and nonnegative"));
                }
                Ok((Arc::new(SoftQuadratic { dim, epsilon: *epsilon }), 1.0, 1.0 + epsilon))
            }
            Family::AnisotropicQuadratic { matrix, lower, upper } => {
                if matrix.len() != dim * dim {
                    return Err(Error::config(
                        "matrix",
                        format!("expected {} entries, found {}", dim * dim, matrix.len()),
                    ));
                }
                for i in 0..dim {
                    for j in 0..i {
                        if matrix[i * dim + j] != matrix[j * dim + i] {
                            return Err(Error::config("matrix", "must be symmetric"));
                        }
                    }
                }
                Ok((
                    Arc::new(AnisotropicQuadratic { dim, matrix: matrix.clone() }),
                    *lower,
                    *upper,
                ))
            }
        }
    }

    /// Short label used in file headers and reports.
    pub fn label(&self) -> String {
        match self {
            Family::Quadratic => "quadratic".into(),
            Family::SoftQuadratic { epsilon } => format!("soft-quadratic(eps={epsilon})"),
            Family::AnisotropicQuadratic { lower, upper, .. } => {
                format!("anisotropic-quadratic[{lower},{upper}]")
            }
        }
    }
}

fn check_pair(name: &str, lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::config(name, format!("need 0 < lower <= upper, got [{lo}, {hi}]")));
    }
    Ok(())
}

/// Convexity and regularity constants of a `(psi, F)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityBounds {
    pub theta: f64,
    #[serde(rename = "Theta")]
    pub big_theta: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub alpha: f64,
    pub holder_const: f64,
}

impl ConvexityBounds {
    pub fn new(
        theta: f64,
        big_theta: f64,
        lambda: f64,
        big_lambda: f64,
        alpha: f64,
        holder_const: f64,
    ) -> Result<Self> {
        check_pair("theta", theta, big_theta)?;
        check_pair("lambda", lambda, big_lambda)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1]"));
        }
        if !(holder_const >= 0.0) {
            return Err(Error::config("holder_const", "must be nonnegative"));
        }
        Ok(ConvexityBounds { theta, big_theta, lambda, big_lambda, alpha, holder_const })
    }

    pub fn of(psi: &ScalarPotential, f: &MatrixPotential) -> Self {
        ConvexityBounds {
            theta: psi.theta,
            big_theta: psi.big_theta,
            lambda: f.lambda,
            big_lambda: f.big_lambda,
            alpha: f.alpha,
            holder_const: f.holder_const,
        }
    }

    pub fn unit() -> Self {
        ConvexityBounds {
            theta: 1.0,
            big_theta: 1.0,
            lambda: 1.0,
            big_lambda: 1.0,
            alpha: 1.0,
            holder_const: 0.0,
        }
    }
}

/// `psi : R^m -> R` with declared bounds `theta I <= D^2 psi <= Theta I`.
#[derive(Clone)]
pub struct ScalarPotential {
    eval: Arc<dyn Evaluator>,
    theta: f64,
    big_theta: f64,
    family: Option<Family>,
}

impl fmt::Debug for ScalarPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarPotential")
            .field("m", &self.m())
            .field("theta", &self.theta)
            .field("Theta", &self.big_theta)
            .field("family", &self.family)
            .finish()
    }
}

impl ScalarPotential {
    pub fn from_family(family: &Family, m: usize) -> Result<Self> {
        let (eval, theta, big_theta) = family.build(m)?;
        check_pair("theta", theta, big_theta)?;
        Ok(ScalarPotential { eval, theta, big_theta, family: Some(family.clone()) })
    }

    pub fn quadratic(m: usize) -> Self {
        Self::from_family(&Family::Quadratic, m).expect("quadratic is always valid")
    }

    pub fn soft_quadratic(m: usize, epsilon: f64) -> Result<Self> {
        Self::from_family(&Family::SoftQuadratic { epsilon }, m)
    }

    /// Wraps an arbitrary evaluator with declared bounds; the bounds are not checked here.
    pub fn custom(eval: Arc<dyn Evaluator>, theta: f64, big_theta: f64) -> Result<Self> {
        check_pair("theta", theta, big_theta)?;
        Ok(ScalarPotential { eval, theta, big_theta, family: None })
    }

    pub fn m(&self) -> usize {
        self.eval.dim()
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn big_theta(&self) -> f64 {
        self.big_theta
    }
    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }
    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.eval
    }
    pub fn value(&self, w: &[f64]) -> f64 {
        self.eval.value(w)
    }
    pub fn gradient(&self, w: &[f64], out: &mut [f64]) {
        self.eval.gradient(w, out)
    }
    pub fn hessian(&self, w: &[f64], out: &mut [f64]) {
        self.eval.hessian(w, out)
    }

    /// Same evaluator with different declared bounds (used for certification fixtures).
    pub fn with_bounds(&self, theta: f64, big_theta: f64) -> Result<Self> {
        check_pair("theta", theta, big_theta)?;
        Ok(ScalarPotential { theta, big_theta, ..self.clone() })
    }
}

/// `F : M^{m x n} -> R` with declared bounds `lambda <= D^2 F <= Lambda` and
/// Hölder data for `D^2 F`.
#[derive(Clone)]
pub struct MatrixPotential {
    eval: Arc<dyn Evaluator>,
    m: usize,
    n: usize,
    lambda: f64,
    big_lambda: f64,
    alpha: f64,
    holder_const: f64,
    family: Option<Family>,
}

impl fmt::Debug for MatrixPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixPotential")
            .field("m", &self.m)
            .field("n", &self.n)
            .field("lambda", &self.lambda)
            .field("Lambda", &self.big_lambda)
            .field("alpha", &self.alpha)
            .field("family", &self.family)
            .finish()
    }
}

impl MatrixPotential {
    pub fn from_family(family: &Family, m: usize, n: usize) -> Result<Self> {
        let (eval, lambda, big_lambda) = family.build(m * n)?;
        check_pair("lambda", lambda, big_lambda)?;
        // Quadratics have constant Hessians. For the soft family the third
        // derivative of eps*sqrt(1+|M|^2) is bounded by 3*eps in Frobenius norm.
        let holder_const = match family {
            Family::SoftQuadratic { epsilon } => 3.0 * epsilon,
            _ => 0.0,
        };
        Ok(MatrixPotential {
            eval,
            m,
            n,
            lambda,
            big_lambda,
            alpha: 1.0,
            holder_const,
            family: Some(family.clone()),
        })
    }

    pub fn quadratic(m: usize, n: usize) -> Self {
        Self::from_family(&Family::Quadratic, m, n).expect("quadratic is always valid")
    }

    pub fn soft_quadratic(m: usize, n: usize, epsilon: f64) -> Result<Self> {
        Self::from_family(&Family::SoftQuadratic { epsilon }, m, n)
    }

    pub fn custom(
        eval: Arc<dyn Evaluator>,
        m: usize,
        n: usize,
        lambda: f64,
        big_lambda: f64,
        alpha: f64,
        holder_const: f64,
    ) -> Result<Self> {
        if eval.dim() != m * n {
            return Err(Error::config("dim", "evaluator dimension must equal m*n"));
        }
        ConvexityBounds::new(1.0, 1.0, lambda, big_lambda, alpha, holder_const)?;
        Ok(MatrixPotential { eval, m, n, lambda, big_lambda, alpha, holder_const, family: None })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.m * self.n
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }
    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }
    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.eval
    }
    pub fn value(&self, mat: &[f64]) -> f64 {
        self.eval.value(mat)
    }
    pub fn gradient(&self, mat: &[f64], out: &mut [f64]) {
        self.eval.gradient(mat, out)
    }
    pub fn hessian(&self, mat: &[f64], out: &mut [f64]) {
        self.eval.hessian(mat, out)
    }

    /// The bilinear form `D^2 F(M)(xi, zeta)`.
    pub fn hessian_form(&self, mat: &[f64], xi: &[f64], zeta: &[f64]) -> f64 {
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        self.eval.hessian(mat, &mut h);
        (0..d)
            .map(|i| xi[i] * (0..d).map(|j| h[i * d + j] * zeta[j]).sum::<f64>())
            .sum()
    }

    pub fn with_bounds(&self, lambda: f64, big_lambda: f64, alpha: f64) -> Result<Self> {
        ConvexityBounds::new(1.0, 1.0, lambda, big_lambda, alpha, self.holder_const)?;
        Ok(MatrixPotential { lambda, big_lambda, alpha, ..self.clone() })
    }
}

/// Minimizes `eval(w) - z.w` by damped Newton with Armijo backtracking,
/// stopping once `|D eval(w) - z| <= tol`. Returns the minimizer.
fn newton_tilted(eval: &dyn Evaluator, z: &[f64], start: &[f64], tol: f64, context: &str) -> Result<Vec<f64>> {
    let d = eval.dim();
    let phi = |w: &[f64]| eval.value(w) - dot(z, w);
    let grad = |w: &[f64], out: &mut [f64]| {
        eval.gradient(w, out);
        for (o, zi) in out.iter_mut().zip(z) {
            *o -= zi;
        }
    };
    let mut w = start.to_vec();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut trace = Vec::new();
    grad(&w, &mut g);
    let mut res = norm(&g);
    for _ in 0..NEWTON_CAP {
        trace.push(res);
        if res <= tol {
            return Ok(w);
        }
        eval.hessian(&w, &mut h);
        let step = DMatrix::from_row_slice(d, d, &h)
            .cholesky()
            .ok_or_else(|| Error::Numeric(format!("{context}: Hessian not positive definite")))?
            .solve(&DVector::from_iterator(d, g.iter().map(|x| -x)));
        let slope: f64 = g.iter().zip(step.iter()).map(|(a, b)| a * b).sum();
        let f0 = phi(&w);
        let mut s = 1.0;
        let mut accepted = None;
        // A full step that halves the residual is taken even when the
        // functional change is below rounding, which happens for large |z|.
        let full: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let mut gf = vec![0.0; d];
        grad(&full, &mut gf);
        if norm(&gf) <= 0.5 * res {
            w = full;
            g = gf;
            res = norm(&g);
            continue;
        }
        let mut fallback: Option<(Vec<f64>, f64)> = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + s * b).collect();
            if phi(&trial) <= f0 + ARMIJO_SLOPE * s * slope {
                accepted = Some(trial);
                break;
            }
            // Close to the minimizer the functional change drowns in rounding;
            // fall back on the gradient norm there.
            let mut gt = vec![0.0; d];
            grad(&trial, &mut gt);
            let rt = norm(&gt);
            if rt < res && fallback.as_ref().is_none_or(|(_, r)| rt < *r) {
                fallback = Some((trial, rt));
            }
            s *= ARMIJO_FACTOR;
        }
        w = match (accepted, fallback) {
            (Some(t), _) => t,
            (None, Some((t, _))) => t,
            (None, None) => {
                return Err(Error::Contract(format!("{context}: line search failed to decrease")));
            }
        };
        grad(&w, &mut g);
        res = norm(&g);
    }
    if res <= tol {
        return Ok(w);
    }
    Err(Error::Convergence { context: context.into(), iterations: NEWTON_CAP, residual: res, trace })
}

/// Returns `(psi~, a)` with `psi~(w) = psi(w + a) - psi(a)` and `a = argmin psi`.
pub fn normalize_scalar(psi: &ScalarPotential) -> Result<(ScalarPotential, Vec<f64>)> {
    let m = psi.m();
    let zero = vec![0.0; m];
    let a = newton_tilted(psi.eval.as_ref(), &zero, &zero, 1e-12, "argmin search").map_err(|e| {
        Error::config("psi", format!("minimizer not found ({e}); declared bounds are likely wrong"))
    })?;
    if a.iter().all(|x| *x == 0.0) && psi.value(&zero) == 0.0 {
        return Ok((psi.clone(), a));
    }
    let base = psi.value(&a);
    let eval = Arc::new(Shifted { inner: psi.eval.clone(), shift: a.clone(), base });
    Ok((ScalarPotential { eval, family: psi.family.clone(), ..psi.clone() }, a))
}

/// Returns `F~(M) = F(M) - F(O) - DF(O).M`.
pub fn normalize_matrix(f: &MatrixPotential) -> MatrixPotential {
    let d = f.dim();
    let zero = vec![0.0; d];
    let c0 = f.value(&zero);
    let mut g0 = vec![0.0; d];
    f.gradient(&zero, &mut g0);
    if c0 == 0.0 && g0.iter().all(|x| *x == 0.0) {
        return f.clone();
    }
    let eval = Arc::new(Tilted { inner: f.eval.clone(), c0, g0 });
    MatrixPotential { eval, ..f.clone() }
}

/// `D psi*(z)`: the `w` with `|D psi(w) - z| <= tol`.
pub fn legendre_dual_grad(psi: &ScalarPotential, z: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    let start: Vec<f64> = z.iter().map(|x| x / psi.big_theta).collect();
    newton_tilted(psi.eval.as_ref(), z, &start, tol, "Legendre inversion")
}

/// `psi*(z) = z.w - psi(w)` with `w = D psi*(z)`.
pub fn legendre_value(psi: &ScalarPotential, z: &[f64], tol: f64) -> Result<f64> {
    let w = legendre_dual_grad(psi, z, tol)?;
    Ok(dot(z, &w) - psi.value(&w))
}

/// `psi*(D psi(w)) = D psi(w).w - psi(w)`, evaluated without inversion.
pub fn dual_at_gradient(psi: &ScalarPotential, w: &[f64]) -> f64 {
    let mut g = vec![0.0; w.len()];
    psi.gradient(w, &mut g);
    dot(&g, w) - psi.value(w)
}

/// Observed range of one certified ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn empty() -> Self {
        Range { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
    fn push(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: String,
    pub ratio: f64,
    pub witness: Vec<f64>,
}

/// Worst-case ratios found by [`verify_bounds`]. Every ratio should lie in
/// `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    /// `(DP(w1) - DP(w2)).(w1 - w2) / |w1 - w2|^2` over sampled pairs.
    pub monotonicity: Range,
    pub hessian_eigen: Range,
    /// `P(w) / (|w|^2/2)`.
    pub value: Range,
    /// `(DP(w).w - P(w)) / (|w|^2/2)`.
    pub conjugate: Range,
    /// `DP(w).w / |w|^2`.
    pub pairing: Range,
    /// `|DP(w)| / |w|`.
    pub gradient: Range,
    pub violation: Option<Violation>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Anything whose convexity constants can be certified by sampling.
pub trait Certifiable {
    fn certified_evaluator(&self) -> &dyn Evaluator;
    fn declared(&self) -> (f64, f64);
}

impl Certifiable for ScalarPotential {
    fn certified_evaluator(&self) -> &dyn Evaluator {
        self.eval.as_ref()
    }
    fn declared(&self) -> (f64, f64) {
        (self.theta, self.big_theta)
    }
}

impl Certifiable for MatrixPotential {
    fn certified_evaluator(&self) -> &dyn Evaluator {
        self.eval.as_ref()
    }
    fn declared(&self) -> (f64, f64) {
        (self.lambda, self.big_lambda)
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = dot(&x, &x);
        if q <= 1.0 && q > 1e-12 {
            return x.into_iter().map(|v| v * radius).collect();
        }
    }
}

/// Samples `sample_count` seeded points and pairs in the ball of `radius` and
/// checks monotonicity, Hessian eigenvalues and the four quadratic bound lines
/// against the declared constants with `1e-9` slack.
pub fn verify_bounds<P: Certifiable>(
    potential: &P,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<BoundsReport> {
    if sample_count < 2 {
        return Err(Error::config("sample_count", "must be at least 2"));
    }
    if !(radius > 0.0) {
        return Err(Error::config("radius", "must be positive"));
    }
    let eval = potential.certified_evaluator();
    let (lower, upper) = potential.declared();
    let d = eval.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BoundsReport {
        lower,
        upper,
        monotonicity: Range::empty(),
        hessian_eigen: Range::empty(),
        value: Range::empty(),
        conjugate: Range::empty(),
        pairing: Range::empty(),
        gradient: Range::empty(),
        violation: None,
    };
    let check = |line: &str, ratio: f64, witness: &[f64], violation: &mut Option<Violation>| {
        let ok = ratio >= lower - CERT_SLACK && ratio <= upper + CERT_SLACK;
        if !ok && violation.is_none() {
            *violation = Some(Violation { line: line.into(), ratio, witness: witness.to_vec() });
        }
    };
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut violation = None;
    for _ in 0..sample_count {
        let w1 = sample_ball(&mut rng, d, radius);
        let w2 = sample_ball(&mut rng, d, radius);
        eval.gradient(&w1, &mut g1);
        eval.gradient(&w2, &mut g2);
        let dw: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
        let dq = dot(&dw, &dw);
        if dq > 0.0 {
            let dg: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
            let r = dot(&dg, &dw) / dq;
            report.monotonicity.push(r);
            let mut pair = w1.clone();
            pair.extend_from_slice(&w2);
            check("monotonicity", r, &pair, &mut violation);
        }

        eval.hessian(&w1, &mut h);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &h)).eigenvalues;
        for &e in eig.iter() {
            report.hessian_eigen.push(e);
            check("hessian eigenvalue", e, &w1, &mut violation);
        }

        let q = dot(&w1, &w1);
        let p = eval.value(&w1);
        let pairing = dot(&g1, &w1);
        let ratios = [
            ("value: P(w) vs |w|^2/2", p / (0.5 * q)),
            ("conjugate: DP(w).w - P(w) vs |w|^2/2", (pairing - p) / (0.5 * q)),
            ("pairing: DP(w).w vs |w|^2", pairing / q),
            ("gradient: |DP(w)| vs |w|", norm(&g1) / q.sqrt()),
        ];
        report.value.push(ratios[0].1);
        report.conjugate.push(ratios[1].1);
        report.pairing.push(ratios[2].1);
        report.gradient.push(ratios[3].1);
        for (line, r) in ratios {
            check(line, r, &w1, &mut violation);
        }
    }
    report.violation = violation;
    Ok(report)
}

/// Largest Hölder exponent not exceeding `alpha` with `alpha p/(p-2) <= 2`.
pub fn effective_alpha(alpha: f64, p: f64) -> f64 {
    alpha.min(2.0 * (p - 2.0) / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub alpha_hat: f64,
    pub const_hat: f64,
}

impl HolderEstimate {
    pub fn certifies(&self, declared_alpha: f64) -> bool {
        self.alpha_hat >= declared_alpha - 0.05
    }
}

/// Fits `log|D^2F(M1) - D^2F(M2)|` against `log|M1 - M2|`.
///
/// Pairs are drawn at matched scales around the origin, where normalized
/// potentials are anchored: the separation `s` is log-uniform in
/// `[1e-3, 1]` and the midpoint lies in the ball of radius `s`. The slope is
/// clamped to `(0, 1]`; a constant Hessian reports `(1, 0)`.
pub fn hessian_holder_estimate(f: &MatrixPotential, sample_count: usize, seed: u64) -> Result<HolderEstimate> {
    if sample_count < 10 {
        return Err(Error::config("sample_count", "must be at least 10"));
    }
    let d = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h1 = vec![0.0; d * d];
    let mut h2 = vec![0.0; d * d];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..sample_count {
        let s = 10f64.powf(rng.gen_range(-3.0..0.0));
        let c = sample_ball(&mut rng, d, s);
        let dir = sample_ball(&mut rng, d, 1.0);
        let dn = norm(&dir);
        let m1: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + 0.5 * s * b / dn).collect();
        let m2: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a - 0.5 * s * b / dn).collect();
        f.hessian(&m1, &mut h1);
        f.hessian(&m2, &mut h2);
        let diff = h1.iter().zip(&h2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if diff > 1e-300 {
            xs.push(s.ln());
            ys.push(diff.ln());
        }
    }
    // Differences at rounding level carry no exponent information.
    if xs.len() * 10 < sample_count {
        return Ok(HolderEstimate { alpha_hat: 1.0, const_hat: 0.0 });
    }
    let fit = crate::fit::least_squares(&xs, &ys)
        .ok_or_else(|| Error::Numeric("degenerate separation spread in Hölder fit".into()))?;
    let alpha_hat = fit.slope.clamp(f64::MIN_POSITIVE, 1.0);
    let intercept = ys.iter().zip(&xs).map(|(y, x)| y - alpha_hat * x).sum::<f64>() / xs.len() as f64;
    Ok(HolderEstimate { alpha_hat, const_hat: intercept.exp() })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn identity_into(d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_quadratic_value_matches_direct_formula() {
        let p = SoftQuadratic { dim: 2, epsilon: 0.5 };
        let w = [0.3, -1.2];
        let q: f64 = 0.09 + 1.44;
        let direct = 0.5 * q + 0.5 * ((1.0 + q).sqrt() - 1.0);
        assert!((p.value(&w) - direct).abs() < 1e-15);
    }

    #[test]
    fn soft_quadratic_hessian_matches_finite_differences() {
        let p = SoftQuadratic { dim: 2, epsilon: 0.5 };
        let w = [0.7, -0.4];
        let mut h = [0.0; 4];
        p.hessian(&w, &mut h);
        let eps = 1e-6;
        for j in 0..2 {
            let mut wp = w;
            let mut wm = w;
            wp[j] += eps;
            wm[j] -= eps;
            let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
            p.gradient(&wp, &mut gp);
            p.gradient(&wm, &mut gm);
            for i in 0..2 {
                assert!(((gp[i] - gm[i]) / (2.0 * eps) - h[i * 2 + j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shifted_quadratic_normalizes_to_origin() {
        let eval = Arc::new(Custom::new(
            1,
            |w| 0.5 * (w[0] - 1.0).powi(2),
            |w, g| g[0] = w[0] - 1.0,
            |_, h| h[0] = 1.0,
        ));
        let psi = ScalarPotential::custom(eval, 1.0, 1.0).unwrap();
        let (tilde, a) = normalize_scalar(&psi).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12);
        assert!(tilde.value(&[0.0]).abs() < 1e-15);
        assert!((tilde.value(&[2.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn effective_alpha_examples() {
        assert_eq!(effective_alpha(1.0, 4.0), 1.0);
        assert!((effective_alpha(1.0, 3.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(effective_alpha(0.2, 4.0), 0.2);
    }

    #[test]
    fn unknown_family_fields_are_rejected() {
        let bad: std::result::Result<Family, _> = toml::from_str("family = \"soft-quadratic\"\nepsilon = 0.5\nfoo = 1");
        assert!(bad.is_err());
    }
}
