//! The implicit time scheme. Step `k` minimizes
//!
//! ```text
//! J(v) = sum_nodes [tau psi((v - v_prev)/tau) - f.v] cellvol + sum_corners w_c F(D_c v)
//! ```
//!
//! whose gradient, divided by the cell volume, is the nodal residual
//! `D psi((v - v_prev)/tau) - div DF(Dv) - f`. The divergence is the transpose
//! of [`StaggeredGradient`], so pairing the residual with any test field
//! reproduces the quadrature of the weak form.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SnapshotField, StaggeredGradient, Trajectory, TrajectoryMeta};
use crate::potentials::{dot, ConvexityBounds, MatrixPotential, ScalarPotential};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Bound on the discrete L2 norm of the step residual.
    pub tol: f64,
    pub max_newton: usize,
    pub armijo_factor: f64,
    pub armijo_slope: f64,
    pub max_backtracks: usize,
    /// Inner CG stops once its residual drops below this fraction of the Newton residual.
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_newton: 50,
            armijo_factor: 0.5,
            armijo_slope: 1e-4,
            max_backtracks: 60,
            cg_rel_tol: 1e-6,
            cg_max_iter: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if self.max_newton == 0 || self.max_backtracks == 0 || self.cg_max_iter == 0 {
            return Err(Error::config("solver", "iteration caps must be at least 1"));
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return Err(Error::config("solver.armijo_factor", "must lie in (0, 1)"));
        }
        if !(self.armijo_slope > 0.0 && self.armijo_slope < 0.5) {
            return Err(Error::config("solver.armijo_slope", "must lie in (0, 1/2)"));
        }
        if !(self.cg_rel_tol > 0.0 && self.cg_rel_tol < 1.0) {
            return Err(Error::config("solver.cg_rel_tol", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub k: usize,
    pub iterations: usize,
    pub residual: f64,
    /// `J` at the initial guess and after every accepted Newton update.
    pub functional: Vec<f64>,
    #[serde(skip)]
    pub wall_ms: f64,
}

struct StepSystem<'a> {
    psi: &'a ScalarPotential,
    f: &'a MatrixPotential,
    grad: &'a StaggeredGradient,
    v_prev: &'a [f64],
    tau: f64,
    forcing: Option<&'a [f64]>,
    m: usize,
    n: usize,
    cell_volume: f64,
}

struct Linearization {
    /// Per node `m x m` blocks of `D^2 psi / tau`.
    psi_blocks: Vec<f64>,
    /// Per corner `mn x mn` blocks of `D^2 F`.
    f_blocks: Vec<f64>,
    diag: Vec<f64>,
}

impl<'a> StepSystem<'a> {
    fn nodes(&self) -> usize {
        self.v_prev.len() / self.m
    }

    fn corner_scale(&self) -> f64 {
        self.grad.weight() / self.cell_volume
    }

    fn rate(&self, v: &[f64], node: usize) -> Vec<f64> {
        let m = self.m;
        (0..m).map(|c| (v[node * m + c] - self.v_prev[node * m + c]) / self.tau).collect()
    }

    fn functional(&self, v: &[f64]) -> f64 {
        let mut nodal = 0.0;
        for node in 0..self.nodes() {
            nodal += self.tau * self.psi.value(&self.rate(v, node));
        }
        if let Some(f) = self.forcing {
            nodal -= dot(f, v);
        }
        nodal * self.cell_volume + self.grad.integrate(v, self.m, |g| self.f.value(g))
    }

    fn residual(&self, v: &[f64]) -> Vec<f64> {
        let (m, mn) = (self.m, self.m * self.n);
        let mut out = vec![0.0; v.len()];
        for node in 0..self.nodes() {
            self.psi.gradient(&self.rate(v, node), &mut out[node * m..(node + 1) * m]);
        }
        let mut grads = vec![0.0; self.grad.corner_count() * mn];
        self.grad.apply(v, m, &mut grads);
        let mut fluxes = vec![0.0; grads.len()];
        for (g, flux) in grads.chunks(mn).zip(fluxes.chunks_mut(mn)) {
            self.f.gradient(g, flux);
        }
        self.grad.apply_transpose_add(&fluxes, m, self.corner_scale(), &mut out);
        if let Some(f) = self.forcing {
            for (o, fi) in out.iter_mut().zip(f) {
                *o -= fi;
            }
        }
        out
    }

    fn linearize(&self, v: &[f64]) -> Linearization {
        let (m, mn) = (self.m, self.m * self.n);
        let nodes = self.nodes();
        let mut psi_blocks = vec![0.0; nodes * m * m];
        let mut diag = vec![0.0; v.len()];
        for node in 0..nodes {
            let block = &mut psi_blocks[node * m * m..(node + 1) * m * m];
            self.psi.hessian(&self.rate(v, node), block);
            block.iter_mut().for_each(|x| *x /= self.tau);
            for c in 0..m {
                diag[node * m + c] = block[c * m + c];
            }
        }
        let corners = self.grad.corner_count();
        let mut grads = vec![0.0; corners * mn];
        self.grad.apply(v, m, &mut grads);
        let mut f_blocks = vec![0.0; corners * mn * mn];
        let scale = self.corner_scale();
        for corner in 0..corners {
            let block = &mut f_blocks[corner * mn * mn..(corner + 1) * mn * mn];
            self.f.hessian(&grads[corner * mn..(corner + 1) * mn], block);
            // diagonal of D^T H D: a node enters the corner gradient once per axis
            let coefs: Vec<(usize, usize, f64)> = self.grad.coefficients(corner).collect();
            for &(node, a, ca) in &coefs {
                for &(node_b, b, cb) in &coefs {
                    if node_b != node {
                        continue;
                    }
                    for c in 0..m {
                        diag[node * m + c] += scale * ca * cb * block[(c * self.n + a) * mn + c * self.n + b];
                    }
                }
            }
        }
        Linearization { psi_blocks, f_blocks, diag }
    }

    fn hess_apply(&self, lin: &Linearization, w: &[f64], out: &mut [f64]) {
        let (m, mn) = (self.m, self.m * self.n);
        for node in 0..self.nodes() {
            let block = &lin.psi_blocks[node * m * m..(node + 1) * m * m];
            for c in 0..m {
                out[node * m + c] = (0..m).map(|d| block[c * m + d] * w[node * m + d]).sum();
            }
        }
        let mut dw = vec![0.0; self.grad.corner_count() * mn];
        self.grad.apply(w, m, &mut dw);
        let mut hdw = vec![0.0; dw.len()];
        for corner in 0..self.grad.corner_count() {
            let block = &lin.f_blocks[corner * mn * mn..(corner + 1) * mn * mn];
            let x = &dw[corner * mn..(corner + 1) * mn];
            for i in 0..mn {
                hdw[corner * mn + i] = (0..mn).map(|j| block[i * mn + j] * x[j]).sum();
            }
        }
        self.grad.apply_transpose_add(&hdw, m, self.corner_scale(), out);
    }

    fn l2(&self, r: &[f64]) -> f64 {
        (dot(r, r) * self.cell_volume).sqrt()
    }
}

/// Diagonally preconditioned conjugate gradients; stops when the Euclidean
/// residual falls below `threshold` or after `max_iter` iterations.
fn pcg(apply: impl Fn(&[f64], &mut [f64]), diag: &[f64], b: &[f64], threshold: f64, max_iter: usize) -> Vec<f64> {
    let len = b.len();
    let mut x = vec![0.0; len];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= threshold {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..len {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

fn check_shapes(v_prev: &SnapshotField, psi: &ScalarPotential, f: &MatrixPotential) -> Result<()> {
    if psi.m() != v_prev.m || f.m() != v_prev.m || f.n() != v_prev.domain.dim() {
        return Err(Error::config(
            "potentials",
            format!(
                "psi acts on R^{}, F on {}x{} matrices, but the field has m={} on an n={} domain",
                psi.m(),
                f.m(),
                f.n(),
                v_prev.m,
                v_prev.domain.dim()
            ),
        ));
    }
    Ok(())
}

/// Nodal residual `D psi((v - v_prev)/tau) - div DF(Dv)`.
pub fn step_residual(
    v: &SnapshotField,
    v_prev: &SnapshotField,
    tau: f64,
    psi: &ScalarPotential,
    f: &MatrixPotential,
) -> Result<Vec<f64>> {
    check_shapes(v_prev, psi, f)?;
    if v.values.len() != v_prev.values.len() {
        return Err(Error::config("v", "shape differs from v_prev"));
    }
    let grad = StaggeredGradient::new(&v.domain);
    let sys = system(&grad, v_prev, tau, psi, f, None);
    Ok(sys.residual(&v.values))
}

/// The step functional `J(v)`.
pub fn step_functional(
    v: &SnapshotField,
    v_prev: &SnapshotField,
    tau: f64,
    psi: &ScalarPotential,
    f: &MatrixPotential,
) -> Result<f64> {
    check_shapes(v_prev, psi, f)?;
    let grad = StaggeredGradient::new(&v.domain);
    Ok(system(&grad, v_prev, tau, psi, f, None).functional(&v.values))
}

/// Discrete L2 norm `(sum |r_i|^2 cellvol)^(1/2)` used for residual tolerances.
pub fn residual_norm(domain: &crate::grid::BoxDomain, r: &[f64]) -> f64 {
    (dot(r, r) * domain.cell_volume()).sqrt()
}

fn system<'a>(
    grad: &'a StaggeredGradient,
    v_prev: &'a SnapshotField,
    tau: f64,
    psi: &'a ScalarPotential,
    f: &'a MatrixPotential,
    forcing: Option<&'a [f64]>,
) -> StepSystem<'a> {
    StepSystem {
        psi,
        f,
        grad,
        v_prev: &v_prev.values,
        tau,
        forcing,
        m: v_prev.m,
        n: v_prev.domain.dim(),
        cell_volume: v_prev.domain.cell_volume(),
    }
}

fn newton(sys: &StepSystem, guess: Vec<f64>, cfg: &SolverConfig, k: usize) -> Result<(Vec<f64>, StepReport)> {
    let start = Instant::now();
    let mut v = guess;
    let mut j = sys.functional(&v);
    let mut functional = vec![j];
    let mut trace = Vec::new();
    let sqrt_vol = sys.cell_volume.sqrt();
    for it in 0..=cfg.max_newton {
        let r = sys.residual(&v);
        let res = sys.l2(&r);
        trace.push(res);
        if res <= cfg.tol {
            let report = StepReport {
                k,
                iterations: it,
                residual: res,
                functional,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            return Ok((v, report));
        }
        if it == cfg.max_newton {
            break;
        }
        let lin = sys.linearize(&v);
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let threshold = cfg.cg_rel_tol * res / sqrt_vol;
        let step = pcg(|w, out| sys.hess_apply(&lin, w, out), &lin.diag, &rhs, threshold, cfg.cg_max_iter);
        let slope = dot(&r, &step) * sys.cell_volume;
        if !(slope < 0.0) {
            return Err(Error::Contract(format!(
                "Newton direction is not a descent direction (slope {slope:e}); check convexity bounds"
            )));
        }
        let mut s = 1.0;
        let mut accepted = None;
        let mut fallback: Option<(Vec<f64>, f64, f64)> = None;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a + s * b).collect();
            let jt = sys.functional(&trial);
            if jt <= j + cfg.armijo_slope * s * slope {
                accepted = Some((trial, jt));
                break;
            }
            // Near the minimizer J changes below rounding; judge by the residual there.
            if s == 1.0 && (jt - j).abs() <= 1e-13 * j.abs().max(1.0) {
                let rt = sys.l2(&sys.residual(&trial));
                if rt < res {
                    fallback = Some((trial, jt, rt));
                    break;
                }
            }
            s *= cfg.armijo_factor;
        }
        let (next, jn) = match (accepted, fallback) {
            (Some(a), _) => a,
            (None, Some((t, jt, _))) => (t, jt),
            (None, None) => {
                return Err(Error::Contract(
                    "line search could not decrease the step functional; check convexity bounds".into(),
                ))
            }
        };
        v = next;
        j = jn;
        functional.push(j);
    }
    Err(Error::Convergence {
        context: "Newton step solve".into(),
        iterations: cfg.max_newton,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace,
    })
}

/// Solves one implicit step starting from `v_prev`.
pub fn solve_step(
    v_prev: &SnapshotField,
    tau: f64,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    cfg: &SolverConfig,
) -> Result<(SnapshotField, StepReport)> {
    solve_step_from(v_prev, &v_prev.values, tau, psi, f, cfg)
}

/// Solves one implicit step starting Newton from `guess`.
pub fn solve_step_from(
    v_prev: &SnapshotField,
    guess: &[f64],
    tau: f64,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    cfg: &SolverConfig,
) -> Result<(SnapshotField, StepReport)> {
    check_shapes(v_prev, psi, f)?;
    cfg.validate()?;
    if guess.len() != v_prev.values.len() {
        return Err(Error::config("guess", "shape differs from v_prev"));
    }
    let grad = StaggeredGradient::new(&v_prev.domain);
    let sys = system(&grad, v_prev, tau, psi, f, None);
    let (values, report) = newton(&sys, guess.to_vec(), cfg, 1)?;
    Ok((SnapshotField { domain: v_prev.domain.clone(), m: v_prev.m, values }, report))
}

/// Forcing term `f(x, t, out)` for manufactured solutions. This extends the
/// homogeneous system and is used only for validation.
pub type Forcing<'a> = &'a dyn Fn(&[f64], f64, &mut [f64]);

/// Runs `N` implicit steps of size `T/N` from `g`.
pub fn run_scheme(
    g: &SnapshotField,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    steps: usize,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    run_scheme_forced(g, psi, f, steps, horizon, cfg, None)
}

/// [`run_scheme`] with an optional forcing evaluated at the new time level.
pub fn run_scheme_forced(
    g: &SnapshotField,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    steps: usize,
    horizon: f64,
    cfg: &SolverConfig,
    forcing: Option<Forcing>,
) -> Result<Trajectory> {
    check_shapes(g, psi, f)?;
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::config("time.steps", "must be at least 1"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config("time.horizon", "must be positive"));
    }
    if g.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("initial", "initial datum has non-finite entries"));
    }
    let tau = horizon / steps as f64;
    let grad = StaggeredGradient::new(&g.domain);
    let mut snapshots = Vec::with_capacity(steps + 1);
    let mut reports = Vec::with_capacity(steps);
    snapshots.push(g.values.clone());
    let mut prev = g.clone();
    for k in 1..=steps {
        let f_values = forcing.map(|fun| {
            SnapshotField::from_fn(&g.domain, g.m, |x, out| fun(x, k as f64 * tau, out)).values
        });
        let sys = system(&grad, &prev, tau, psi, f, f_values.as_deref());
        let (values, report) = newton(&sys, prev.values.clone(), cfg, k)
            .map_err(|e| Error::Step { step: k, source: Box::new(e) })?;
        snapshots.push(values.clone());
        reports.push(report);
        prev.values = values;
    }
    let mut traj = Trajectory::new(g.domain.clone(), g.m, tau, snapshots)?;
    traj.meta = TrajectoryMeta {
        psi: psi.family().cloned(),
        f: f.family().cloned(),
        bounds: ConvexityBounds::of(psi, f),
        tol: cfg.tol,
    };
    traj.reports = reports;
    Ok(traj)
}

/// Piecewise-constant `v_N` (right-continuous, `v^k` on `(tau_{k-1}, tau_k]`)
/// and piecewise-linear `u_N` at time `t`.
pub fn interpolants(traj: &Trajectory, t: f64) -> Result<(SnapshotField, SnapshotField)> {
    let horizon = traj.horizon();
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::config("t", format!("time {t} outside [0, {horizon}]")));
    }
    if t == 0.0 {
        return Ok((traj.field(0), traj.field(0)));
    }
    let s = t / traj.tau;
    let nearest = s.round();
    let k = if (s - nearest).abs() <= 1e-9 * s.max(1.0) { nearest as usize } else { s.ceil() as usize };
    let k = k.clamp(1, traj.steps());
    let lambda = ((t - traj.time(k - 1)) / traj.tau).clamp(0.0, 1.0);
    let linear = traj.snapshots[k - 1]
        .iter()
        .zip(&traj.snapshots[k])
        .map(|(a, b)| a + lambda * (b - a))
        .collect();
    let u = SnapshotField { domain: traj.domain.clone(), m: traj.m, values: linear };
    Ok((traj.field(k), u))
}
