//! Energy identities and a-priori bounds evaluated on trajectories.
//!
//! Spatial integrals of `F(Dv)` and `|Dv|^2` use the same staggered corner
//! quadrature as the time scheme, so the discrete identities hold exactly up
//! to the solver residual. Inequality checks carry the slack
//! `tol * (1 + ||delta_k||)` per step, with `tol` the residual tolerance the
//! trajectory was computed with.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    cylinder_points, cylinder_samples, gradient_at, mean_of, BoxDomain, ParabolicCylinder, Quantity,
    StaggeredGradient, Trajectory,
};
use crate::potentials::{dot, dual_at_gradient, MatrixPotential, ScalarPotential};
use crate::stepper::residual_norm;

/// Per-step energy bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub k: usize,
    pub t: f64,
    /// `int F(Dv^k)`.
    pub potential: f64,
    /// `int Dpsi(delta_k/tau).delta_k`; zero at `k = 0`.
    pub dissipation: f64,
    /// `int psi*(Dpsi(delta_k/tau))`; zero at `k = 0`.
    pub dual: f64,
    /// `dissipation + potential_k - potential_{k-1}`, for `k >= 1`.
    pub d: Option<f64>,
    /// `int (DF(Dv^k) - DF(Dv^{k-1})).(Dv^k - Dv^{k-1}) + tau (dual_k - dual_{k-1})`, for `k >= 2`.
    pub e: Option<f64>,
    pub slack: f64,
    /// `int |delta_k|^2 / tau`.
    pub increment: f64,
    /// `int |D delta_k|^2 / tau`.
    pub gradient_increment: f64,
    /// `int |Dv^k|^2`.
    pub dirichlet: f64,
}

impl LedgerEntry {
    pub fn d_pass(&self) -> bool {
        self.d.is_none_or(|d| d <= self.slack)
    }
    pub fn e_pass(&self) -> bool {
        self.e.is_none_or(|e| e <= self.slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub tau: f64,
    pub tol: f64,
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    /// `sum d_k - (sum dissipation + int F(Dv^N) - int F(Dg))`.
    pub fn telescoping_gap(&self) -> f64 {
        let sum_d: f64 = self.entries.iter().filter_map(|e| e.d).sum();
        let sum_diss: f64 = self.entries.iter().map(|e| e.dissipation).sum();
        let last = self.entries.last().map_or(0.0, |e| e.potential);
        sum_d - (sum_diss + last - self.entries[0].potential)
    }

    pub fn total_slack(&self) -> f64 {
        self.entries.iter().skip(1).map(|e| e.slack).sum()
    }
}

fn check_potentials(traj: &Trajectory, psi: &ScalarPotential, f: &MatrixPotential) -> Result<()> {
    if psi.m() != traj.m || f.m() != traj.m || f.n() != traj.domain.dim() {
        return Err(Error::config("potentials", "potential dimensions do not match the trajectory"));
    }
    Ok(())
}

/// Builds the full ledger of a trajectory.
pub fn energy_ledger(traj: &Trajectory, psi: &ScalarPotential, f: &MatrixPotential) -> Result<EnergyLedger> {
    check_potentials(traj, psi, f)?;
    let domain = &traj.domain;
    let (m, n) = (traj.m, domain.dim());
    let mn = m * n;
    let grad = StaggeredGradient::new(domain);
    let corners = grad.corner_count();
    let vol = domain.cell_volume();
    let tau = traj.tau;
    let tol = traj.meta.tol;

    let corner_grads = |values: &[f64]| {
        let mut out = vec![0.0; corners * mn];
        grad.apply(values, m, &mut out);
        out
    };
    let mut prev_grads = corner_grads(&traj.snapshots[0]);
    let mut prev_flux = fluxes(f, &prev_grads, mn);
    let potential0: f64 = prev_grads.chunks(mn).map(|g| f.value(g)).sum::<f64>() * grad.weight();
    let dirichlet0 = dot(&prev_grads, &prev_grads) * grad.weight();
    let mut entries = vec![LedgerEntry {
        k: 0,
        t: 0.0,
        potential: potential0,
        dissipation: 0.0,
        dual: 0.0,
        d: None,
        e: None,
        slack: 0.0,
        increment: 0.0,
        gradient_increment: 0.0,
        dirichlet: dirichlet0,
    }];
    let mut rate = vec![0.0; m];
    let mut dpsi = vec![0.0; m];
    for k in 1..=traj.steps() {
        let cur = &traj.snapshots[k];
        let prev = &traj.snapshots[k - 1];
        let delta: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| a - b).collect();
        let mut dissipation = 0.0;
        let mut dual = 0.0;
        for node in 0..domain.node_count() {
            for c in 0..m {
                rate[c] = delta[node * m + c] / tau;
            }
            psi.gradient(&rate, &mut dpsi);
            dissipation += dot(&dpsi, &delta[node * m..(node + 1) * m]);
            dual += dual_at_gradient(psi, &rate);
        }
        dissipation *= vol;
        dual *= vol;
        let grads = corner_grads(cur);
        let flux = fluxes(f, &grads, mn);
        let potential = grads.chunks(mn).map(|g| f.value(g)).sum::<f64>() * grad.weight();
        let mut monotone = 0.0;
        let mut grad_inc = 0.0;
        for i in 0..grads.len() {
            let dg = grads[i] - prev_grads[i];
            monotone += (flux[i] - prev_flux[i]) * dg;
            grad_inc += dg * dg;
        }
        monotone *= grad.weight();
        let prior = entries.last().expect("ledger starts with k = 0");
        let d = dissipation + potential - prior.potential;
        let e = (k >= 2).then_some(monotone + tau * (dual - prior.dual));
        let delta_norm = residual_norm(domain, &delta);
        entries.push(LedgerEntry {
            k,
            t: traj.time(k),
            potential,
            dissipation,
            dual,
            d: Some(d),
            e,
            slack: tol * (1.0 + delta_norm),
            increment: dot(&delta, &delta) * vol / tau,
            gradient_increment: grad_inc * grad.weight() / tau,
            dirichlet: dot(&grads, &grads) * grad.weight(),
        });
        prev_grads = grads;
        prev_flux = flux;
    }
    Ok(EnergyLedger { tau, tol, entries })
}

fn fluxes(f: &MatrixPotential, grads: &[f64], mn: usize) -> Vec<f64> {
    let mut out = vec![0.0; grads.len()];
    for (g, o) in grads.chunks(mn).zip(out.chunks_mut(mn)) {
        f.gradient(g, o);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationReport {
    /// `(k, d_k, slack_k)` for `k = 1..=N`.
    pub defects: Vec<(usize, f64, f64)>,
    /// `int F(Dv^j) + sum_{k<=j} dissipation_k` at the step `j` closest to violation.
    pub summed_lhs: f64,
    /// `int F(Dg) + sum_{k<=j} slack_k` at the same step.
    pub summed_rhs: f64,
    pub telescoping_gap: f64,
    pub pass: bool,
}

/// First discrete identity: every `d_k <= slack_k`, plus its summed form.
pub fn dissipation_defect(traj: &Trajectory, psi: &ScalarPotential, f: &MatrixPotential) -> Result<DissipationReport> {
    let ledger = energy_ledger(traj, psi, f)?;
    Ok(dissipation_from_ledger(&ledger))
}

pub fn dissipation_from_ledger(ledger: &EnergyLedger) -> DissipationReport {
    let defects: Vec<(usize, f64, f64)> =
        ledger.entries.iter().filter_map(|e| e.d.map(|d| (e.k, d, e.slack))).collect();
    let start = ledger.entries[0].potential;
    let (mut dissipated, mut slack) = (0.0, 0.0);
    let (mut summed_lhs, mut summed_rhs) = (start, start);
    for e in ledger.entries.iter().skip(1) {
        dissipated += e.dissipation;
        slack += e.slack;
        let (lhs, rhs) = (e.potential + dissipated, start + slack);
        if rhs - lhs < summed_rhs - summed_lhs {
            (summed_lhs, summed_rhs) = (lhs, rhs);
        }
    }
    let pass = ledger.entries.iter().all(LedgerEntry::d_pass) && summed_lhs <= summed_rhs;
    DissipationReport { defects, summed_lhs, summed_rhs, telescoping_gap: ledger.telescoping_gap(), pass }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondIdentityReport {
    /// `(k, e_k, slack_k)` for `k = 2..=N`.
    pub defects: Vec<(usize, f64, f64)>,
    pub pass: bool,
}

/// Second discrete identity: every `e_k <= slack_k`.
pub fn second_identity_defect(
    traj: &Trajectory,
    psi: &ScalarPotential,
    f: &MatrixPotential,
) -> Result<SecondIdentityReport> {
    let ledger = energy_ledger(traj, psi, f)?;
    Ok(second_identity_from_ledger(&ledger))
}

pub fn second_identity_from_ledger(ledger: &EnergyLedger) -> SecondIdentityReport {
    let defects: Vec<(usize, f64, f64)> =
        ledger.entries.iter().filter_map(|e| e.e.map(|v| (e.k, v, e.slack))).collect();
    let pass = ledger.entries.iter().all(LedgerEntry::e_pass);
    SecondIdentityReport { defects, pass }
}

/// Outcome of an inequality `lhs <= rhs + slack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64, constant: f64, slack: f64) -> Self {
        BoundCheck { lhs, rhs, constant, slack, pass: lhs <= rhs + slack }
    }

    /// `lhs / rhs`, or zero when both sides vanish.
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Constant of the first discrete bound, `Lambda/(2 theta) + Lambda/lambda`.
///
/// Summing the first identity gives
/// `theta sum |delta|^2/tau + max_j int F(Dv^j) <= int F(Dg) + S` with `S`
/// the summed slack. Then `int F(Dg) <= Lambda/2 int |Dg|^2` and
/// `int F(Dv^j) >= lambda/2 int |Dv^j|^2` bound each term separately; the
/// slack enters with weight `1/theta + 2/lambda`.
pub fn bound1_constant(theta: f64, lambda: f64, big_lambda: f64) -> f64 {
    big_lambda / (2.0 * theta) + big_lambda / lambda
}

/// `sum_k int |delta_k|^2/tau + max_k int |Dv^k|^2 <= C int |Dg|^2`.
pub fn discrete_bound1_check(traj: &Trajectory, psi: &ScalarPotential, f: &MatrixPotential) -> Result<BoundCheck> {
    let ledger = energy_ledger(traj, psi, f)?;
    Ok(bound1_from_ledger(&ledger, psi, f))
}

pub fn bound1_from_ledger(ledger: &EnergyLedger, psi: &ScalarPotential, f: &MatrixPotential) -> BoundCheck {
    let (theta, lambda, big_lambda) = (psi.theta(), f.lambda(), f.big_lambda());
    let c = bound1_constant(theta, lambda, big_lambda);
    let lhs = ledger.entries.iter().map(|e| e.increment).sum::<f64>()
        + ledger.entries.iter().skip(1).map(|e| e.dirichlet).fold(0.0, f64::max);
    let rhs = c * ledger.entries[0].dirichlet;
    let slack = (1.0 / theta + 2.0 / lambda) * ledger.total_slack();
    BoundCheck::new(lhs, rhs, c, slack)
}

/// Constant of the second discrete bound.
///
/// Weighting the second identity by a cutoff `f` with `|f'| <= 2/d` and
/// summing by parts gives
/// `lambda sum f int |D delta|^2/tau + theta/2 max f int |delta_{k-1}/tau|^2
///   <= Theta/d sum int |delta|^2/tau`;
/// dividing by `min{theta, lambda}/2` and inserting the first bound yields
/// `C = Theta / (min{theta, lambda}/2) * (Lambda/(2 theta) + Lambda/lambda)`.
pub fn bound2_constant(theta: f64, big_theta: f64, lambda: f64, big_lambda: f64) -> f64 {
    big_theta / (0.5 * theta.min(lambda)) * bound1_constant(theta, lambda, big_lambda)
}

/// `sum_{d<=t_k<=T-d} int |D delta_k|^2/tau + max_{d<=t_k<=T-d} int |delta_{k-1}/tau|^2 <= (C/d) int |Dg|^2`.
///
/// The time cutoff is the piecewise-linear profile rising from 0 at `d/2`
/// to 1 at `d`, which requires `tau <= d/4` so that it vanishes on `[0, 2 tau]`.
pub fn discrete_bound2_check(
    traj: &Trajectory,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    d: f64,
) -> Result<BoundCheck> {
    let horizon = traj.horizon();
    if !(d > 0.0 && d < horizon / 2.0) {
        return Err(Error::config("d", format!("need 0 < d < T/2 = {}", horizon / 2.0)));
    }
    if traj.tau > d / 4.0 {
        return Err(Error::config("d", "time step too coarse: the cutoff must vanish on [0, 2 tau]"));
    }
    let ledger = energy_ledger(traj, psi, f)?;
    let (theta, big_theta, lambda, big_lambda) = (psi.theta(), psi.big_theta(), f.lambda(), f.big_lambda());
    let c = bound2_constant(theta, big_theta, lambda, big_lambda);
    let inside = |e: &&LedgerEntry| e.k >= 1 && e.t >= d * (1.0 - 1e-12) && e.t <= (horizon - d) * (1.0 + 1e-12);
    let mut lhs_sum = 0.0;
    let mut lhs_max: f64 = 0.0;
    for e in ledger.entries.iter().filter(inside) {
        lhs_sum += e.gradient_increment;
        if e.k >= 2 {
            lhs_max = lhs_max.max(ledger.entries[e.k - 1].increment / ledger.tau);
        }
    }
    let rhs = c / d * ledger.entries[0].dirichlet;
    let weight = 1.0 / (0.5 * theta.min(lambda));
    let slack = weight * (ledger.total_slack() / ledger.tau + big_theta / d * bound1_from_ledger(&ledger, psi, f).slack);
    Ok(BoundCheck::new(lhs_sum + lhs_max, rhs, c, slack))
}

/// `eta(y, s) = eta0(y) eta1(s)`: `eta0` is a product of ramps equal to 1 on
/// the box `|y_a - x_a| <= r` and 0 outside `|y_a - x_a| >= 2r`; `eta1` is 1
/// on `[t - r^2/2, t + r^2/2]` and 0 outside `[t - 2r^2, t + 2r^2]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffFunction {
    pub x: Vec<f64>,
    pub t: f64,
    pub r: f64,
}

fn ramp(s: f64, inner: f64, outer: f64) -> (f64, f64) {
    if s <= inner {
        (1.0, 0.0)
    } else if s >= outer {
        (0.0, 0.0)
    } else {
        ((outer - s) / (outer - inner), -1.0 / (outer - inner))
    }
}

impl CutoffFunction {
    pub fn new(x: Vec<f64>, t: f64, r: f64) -> Self {
        CutoffFunction { x, t, r }
    }

    pub fn eta0(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.x).map(|(yi, xi)| ramp((yi - xi).abs(), self.r, 2.0 * self.r).0).product()
    }

    pub fn grad_eta0(&self, y: &[f64]) -> Vec<f64> {
        let parts: Vec<(f64, f64)> = y
            .iter()
            .zip(&self.x)
            .map(|(yi, xi)| {
                let (v, dv) = ramp((yi - xi).abs(), self.r, 2.0 * self.r);
                (v, dv * (yi - xi).signum())
            })
            .collect();
        (0..parts.len())
            .map(|a| {
                parts.iter().enumerate().map(|(b, (v, dv))| if a == b { *dv } else { *v }).product()
            })
            .collect()
    }

    pub fn eta1(&self, s: f64) -> f64 {
        let r2 = self.r * self.r;
        ramp((s - self.t).abs(), 0.5 * r2, 2.0 * r2).0
    }

    pub fn deta1(&self, s: f64) -> f64 {
        let r2 = self.r * self.r;
        ramp((s - self.t).abs(), 0.5 * r2, 2.0 * r2).1 * (s - self.t).signum()
    }

    pub fn eta(&self, y: &[f64], s: f64) -> f64 {
        self.eta0(y) * self.eta1(s)
    }

    /// Checks `0 <= eta <= 1` and the slope bounds `2/r`, `2/r^2` between
    /// neighbouring nodes and time levels of a grid.
    pub fn verify_on_grid(&self, domain: &BoxDomain, times: &[f64]) -> bool {
        let n = domain.dim();
        for node in 0..domain.node_count() {
            let y = domain.coords(node);
            let v = self.eta0(&y);
            if !(0.0..=1.0).contains(&v) {
                return false;
            }
            for a in 0..n {
                if let Some(next) = domain.offset(node, a, 1) {
                    let slope = (self.eta0(&domain.coords(next)) - v).abs() / domain.h(a);
                    if slope > 2.0 / self.r + 1e-12 {
                        return false;
                    }
                }
            }
        }
        times.windows(2).all(|w| {
            let slope = (self.eta1(w[1]) - self.eta1(w[0])).abs() / (w[1] - w[0]);
            slope <= 2.0 / (self.r * self.r) + 1e-12 && (0.0..=1.0).contains(&self.eta1(w[0]))
        })
    }
}

/// A compactly supported space-time test function.
pub trait TestFunction {
    fn phi(&self, y: &[f64], s: f64) -> f64;
    fn grad_phi(&self, y: &[f64], s: f64) -> Vec<f64>;
    /// Spatial box `(lo, hi)` and time interval containing the support.
    fn support(&self) -> (Vec<f64>, Vec<f64>, f64, f64);
}

impl TestFunction for CutoffFunction {
    fn phi(&self, y: &[f64], s: f64) -> f64 {
        self.eta(y, s).powi(2)
    }
    fn grad_phi(&self, y: &[f64], s: f64) -> Vec<f64> {
        let e1 = self.eta1(s);
        let e0 = self.eta0(y);
        self.grad_eta0(y).into_iter().map(|g| 2.0 * e0 * e1 * e1 * g).collect()
    }
    fn support(&self) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let r2 = self.r * self.r;
        (
            self.x.iter().map(|x| x - 2.0 * self.r).collect(),
            self.x.iter().map(|x| x + 2.0 * self.r).collect(),
            self.t - 2.0 * r2,
            self.t + 2.0 * r2,
        )
    }
}

/// Residual time series of the two localized energy identities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityResidual {
    /// First identity at half steps `t_{k-1/2}`, `k = 1..=N`.
    pub main: Vec<f64>,
    /// Second identity at `t_k`, `k = 1..N`.
    pub second: Vec<f64>,
}

impl IdentityResidual {
    /// `sum |R| tau` for the first and second identity.
    pub fn l1(&self, tau: f64) -> (f64, f64) {
        (
            self.main.iter().map(|r| r.abs()).sum::<f64>() * tau,
            self.second.iter().map(|r| r.abs()).sum::<f64>() * tau,
        )
    }
}

/// Discretizes both localized identities with test function `phi` using
/// centered spatial stencils and midpoint-in-time evaluation.
pub fn continuum_identity_residual(
    traj: &Trajectory,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    phi: &dyn TestFunction,
) -> Result<IdentityResidual> {
    check_potentials(traj, psi, f)?;
    let domain = &traj.domain;
    let (lo, hi, t0, t1) = phi.support();
    let n = domain.dim();
    for a in 0..n {
        if lo[a] < domain.lo()[a] - 1e-12 || hi[a] > domain.hi()[a] + 1e-12 {
            return Err(Error::Geometry(format!("test function support leaves the domain along axis {a}")));
        }
    }
    if t0 < -1e-12 || t1 > traj.horizon() + 1e-12 {
        return Err(Error::Geometry("test function support leaves the time interval".into()));
    }
    let m = traj.m;
    let mn = m * n;
    let tau = traj.tau;
    let vol = domain.cell_volume();
    let nodes = domain.node_count();
    let coords: Vec<Vec<f64>> = (0..nodes).map(|i| domain.coords(i)).collect();
    let steps = traj.steps();

    let grads: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| {
            let mut g = vec![0.0; nodes * mn];
            for node in 0..nodes {
                gradient_at(domain, m, s, node, &mut g[node * mn..(node + 1) * mn]);
            }
            g
        })
        .collect();
    let rate = |k: usize, node: usize| -> Vec<f64> {
        (0..m).map(|c| (traj.snapshots[k][node * m + c] - traj.snapshots[k - 1][node * m + c]) / tau).collect()
    };

    let mut main = Vec::with_capacity(steps);
    let mut flux = vec![0.0; mn];
    let mut dpsi = vec![0.0; m];
    for k in 1..=steps {
        let (ta, tb) = (traj.time(k - 1), traj.time(k));
        let tm = 0.5 * (ta + tb);
        let mut sum = 0.0;
        for node in 0..nodes {
            let y = &coords[node];
            let (pa, pb) = (phi.phi(y, ta), phi.phi(y, tb));
            let fa = f.value(&grads[k - 1][node * mn..(node + 1) * mn]);
            let fb = f.value(&grads[k][node * mn..(node + 1) * mn]);
            let w = rate(k, node);
            psi.gradient(&w, &mut dpsi);
            let pm = 0.5 * (pa + pb);
            let dm: Vec<f64> = (0..mn)
                .map(|i| 0.5 * (grads[k][node * mn + i] + grads[k - 1][node * mn + i]))
                .collect();
            f.gradient(&dm, &mut flux);
            let gphi = phi.grad_phi(y, tm);
            let transport: f64 = (0..m).map(|c| w[c] * (0..n).map(|a| flux[c * n + a] * gphi[a]).sum::<f64>()).sum();
            // d/dt int phi F(Dv) - int F(Dv) phi_t cancels to phi_mid (F_b - F_a)/tau
            sum += pm * (fb - fa) / tau + pm * dot(&dpsi, &w) + transport;
        }
        main.push(sum * vol);
    }

    let duals: Vec<Vec<f64>> = (1..=steps)
        .map(|k| (0..nodes).map(|node| dual_at_gradient(psi, &rate(k, node))).collect())
        .collect();
    let rate_grads: Vec<Vec<f64>> = (1..=steps)
        .map(|k| grads[k].iter().zip(&grads[k - 1]).map(|(a, b)| (a - b) / tau).collect())
        .collect();
    let mut second = Vec::with_capacity(steps.saturating_sub(1));
    let d = mn;
    let mut hess = vec![0.0; d * d];
    for k in 1..steps {
        let t = traj.time(k);
        let (ta, tb) = (t - 0.5 * tau, t + 0.5 * tau);
        let mut sum = 0.0;
        for node in 0..nodes {
            let y = &coords[node];
            let (pa, pb) = (phi.phi(y, ta), phi.phi(y, tb));
            let (qa, qb) = (duals[k - 1][node], duals[k][node]);
            let pk = phi.phi(y, t);
            let gphi = phi.grad_phi(y, t);
            f.hessian(&grads[k][node * mn..(node + 1) * mn], &mut hess);
            let dvt: Vec<f64> = (0..mn)
                .map(|i| 0.5 * (rate_grads[k - 1][node * mn + i] + rate_grads[k][node * mn + i]))
                .collect();
            let hdvt: Vec<f64> = (0..d).map(|i| (0..d).map(|j| hess[i * d + j] * dvt[j]).sum()).collect();
            let (wa, wb) = (rate(k, node), rate(k + 1, node));
            let vt: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| 0.5 * (a + b)).collect();
            let transport: f64 =
                (0..m).map(|c| vt[c] * (0..n).map(|a| hdvt[c * n + a] * gphi[a]).sum::<f64>()).sum();
            let pm = 0.5 * (pa + pb);
            sum += pm * (qb - qa) / tau + pk * dot(&hdvt, &dvt) + transport;
        }
        second.push(sum * vol);
    }
    Ok(IdentityResidual { main, second })
}

/// Constant of the local Caccioppoli estimate,
/// `C = 8 C1 max{1, Theta} / min{theta, lambda}` with
/// `C1 = (Theta + 2 Lambda^2/lambda) / (min{theta, lambda}/2)` the constant
/// of the localized second energy bound.
///
/// With the cutoff bounds `|D eta| <= 2/r`, `|eta_t| <= 2/r^2` the weight
/// `eta |eta_t| + |D eta|^2` is at most `8/r^2`; the extra
/// `max{1, Theta}/min{theta, lambda}` accounts for replacing `v_t` by
/// `v_t - (v_t)_{Q_2r}` through the shifted potential.
pub fn caccioppoli_constant(theta: f64, big_theta: f64, lambda: f64, big_lambda: f64) -> f64 {
    let c1 = energy_bound2_constant(theta, big_theta, lambda, big_lambda);
    8.0 * c1 * big_theta.max(1.0) / theta.min(lambda)
}

/// `(Theta + 2 Lambda^2/lambda) / (min{theta, lambda}/2)`.
pub fn energy_bound2_constant(theta: f64, big_theta: f64, lambda: f64, big_lambda: f64) -> f64 {
    (big_theta + 2.0 * big_lambda * big_lambda / lambda) / (0.5 * theta.min(lambda))
}

/// `Lambda (1 + 2 Lambda/theta) / (min{theta, lambda}/2)`.
pub fn energy_bound1_constant(theta: f64, lambda: f64, big_lambda: f64) -> f64 {
    big_lambda * (1.0 + 2.0 * big_lambda / theta) / (0.5 * theta.min(lambda))
}

/// `int_{Q_r} |Dv_t|^2 <= (C/r^2) int_{Q_2r} |v_t - (v_t)_{Q_2r}|^2`.
pub fn caccioppoli_check(
    traj: &Trajectory,
    psi: &ScalarPotential,
    f: &MatrixPotential,
    cyl: &ParabolicCylinder,
) -> Result<BoundCheck> {
    check_potentials(traj, psi, f)?;
    let outer = cylinder_points(traj, &cyl.scaled(2.0))?;
    let inner = cylinder_points(traj, cyl)?;
    let domain = &traj.domain;
    let (m, n) = (traj.m, domain.dim());
    let weight = domain.cell_volume() * traj.tau;

    let vt = cylinder_samples(traj, Quantity::Vt, &outer);
    let mean = mean_of(&vt, m);
    let osc: f64 = vt.chunks(m).map(|w| w.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();

    let mut lhs = 0.0;
    let mut g = vec![0.0; m * n];
    for &k in &inner.steps {
        let rate: Vec<f64> = traj.snapshots[k].iter().zip(&traj.snapshots[k - 1]).map(|(a, b)| (a - b) / traj.tau).collect();
        for &node in &inner.nodes {
            gradient_at(domain, m, &rate, node, &mut g);
            lhs += dot(&g, &g);
        }
    }
    let c = caccioppoli_constant(psi.theta(), psi.big_theta(), f.lambda(), f.big_lambda());
    let rhs = c / (cyl.r * cyl.r) * osc * weight;
    Ok(BoundCheck::new(lhs * weight, rhs, c, 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_constants() {
        assert_eq!(bound1_constant(1.0, 1.0, 1.0), 1.5);
        assert_eq!(energy_bound2_constant(1.0, 1.0, 1.0, 1.0), 6.0);
        assert_eq!(energy_bound1_constant(1.0, 1.0, 1.0), 6.0);
        assert_eq!(caccioppoli_constant(1.0, 1.0, 1.0, 1.0), 48.0);
        assert_eq!(bound2_constant(1.0, 1.0, 1.0, 1.0), 3.0);
    }

    #[test]
    fn cutoff_profiles() {
        let c = CutoffFunction::new(vec![0.5], 0.5, 0.1);
        assert_eq!(c.eta0(&[0.55]), 1.0);
        assert!((c.eta0(&[0.65]) - 0.5).abs() < 1e-12);
        assert_eq!(c.eta0(&[0.75]), 0.0);
        assert_eq!(c.eta1(0.5 + 0.004), 1.0);
        assert_eq!(c.eta1(0.5 + 0.03), 0.0);
        assert!((c.grad_eta0(&[0.65])[0] + 10.0).abs() < 1e-9);
        assert!((c.deta1(0.5 - 0.0125) - 1.0 / 0.015).abs() < 1e-9);
    }
}
