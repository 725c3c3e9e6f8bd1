//! The acceptance suite: criteria 1 through 9 evaluated on reference runs,
//! plus the byte-level determinism comparison of two suite reports.
//!
//! Every check carries a measured value and a pinned threshold. Runtimes are
//! reported separately from the CSV so that repeated runs stay byte-identical.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{
    bound1_constant, bound1_from_ledger, discrete_bound2_check, dissipation_from_ledger, energy_ledger,
    second_identity_from_ledger,
};
use crate::error::{Error, Result};
use crate::grid::{BoxDomain, ParabolicCylinder, Quantity, SnapshotField, Trajectory};
use crate::io::write_csv;
use crate::potentials::{
    dual_at_gradient, legendre_dual_grad, legendre_value, verify_bounds, Family, MatrixPotential, ScalarPotential,
};
use crate::regularity::{
    backwards_decay_check, backwards_decay_constant, decay_classification, energy_scaling_exponent,
    fractional_quotient_exponent, parabolic_dimension, quotient_floor, singular_set_budget, thresholds, DecayFlag,
    SpaceTimePoint, SpaceTimeRegion,
};
use crate::stepper::{run_scheme, solve_step, SolverConfig};

/// One measured quantity compared against its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, requirement: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), value, requirement: requirement.into(), pass }
    }
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check::new(name, value, format!("<= {limit:e}"), value <= limit)
    }
    fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check::new(name, value, format!("in [{lo}, {hi}]"), value >= lo && value <= hi)
    }
    fn flag(name: &str, ok: bool) -> Self {
        Check::new(name, if ok { 1.0 } else { 0.0 }, "== 1", ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl CriterionResult {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// `PASS [n] title` or `FAIL [n] title (failing checks)`.
    pub fn line(&self) -> String {
        if self.pass() {
            format!("PASS [{}] {}", self.id, self.title)
        } else {
            let failing: Vec<String> =
                self.failing().map(|c| format!("{} = {} (need {})", c.name, c.value, c.requirement)).collect();
            format!("FAIL [{}] {} ({})", self.id, self.title, failing.join("; "))
        }
    }
}

fn timed(id: u32, title: &str, body: impl FnOnce() -> Result<Vec<Check>>) -> Result<CriterionResult> {
    let start = Instant::now();
    let checks = body()?;
    Ok(CriterionResult { id, title: title.into(), checks, elapsed: start.elapsed() })
}

/// Reference runs shared by several criteria.
pub struct ReferenceRuns {
    pub heat: Trajectory,
    pub soft: Trajectory,
    pub quadratic: (ScalarPotential, MatrixPotential),
    pub soft_potentials: (ScalarPotential, MatrixPotential),
    pub heat_elapsed: Duration,
}

pub const HORIZON: f64 = 0.1;
pub const STEPS: usize = 100;
pub const CELLS: usize = 99;
pub const TOL: f64 = 1e-10;

fn sine_datum(cells: usize) -> Result<SnapshotField> {
    let domain = BoxDomain::unit(1, cells)?;
    Ok(SnapshotField::from_fn(&domain, 1, |x, out| out[0] = (PI * x[0]).sin()))
}

fn solver() -> SolverConfig {
    SolverConfig { tol: TOL, ..SolverConfig::default() }
}

impl ReferenceRuns {
    /// The sine eigenmode on `(0, 1)` with `h = 1/100`, `tau = 1e-3`, `T = 0.1`,
    /// once with quadratic potentials and once with soft-quadratic ones (`eps = 0.5`).
    pub fn compute() -> Result<Self> {
        let g = sine_datum(CELLS)?;
        let quadratic = (ScalarPotential::quadratic(1), MatrixPotential::quadratic(1, 1));
        let soft_potentials = (ScalarPotential::soft_quadratic(1, 0.5)?, MatrixPotential::soft_quadratic(1, 1, 0.5)?);
        let start = Instant::now();
        let heat = run_scheme(&g, &quadratic.0, &quadratic.1, STEPS, HORIZON, &solver())?;
        let heat_elapsed = start.elapsed();
        let soft = run_scheme(&g, &soft_potentials.0, &soft_potentials.1, STEPS, HORIZON, &solver())?;
        Ok(ReferenceRuns { heat, soft, quadratic, soft_potentials, heat_elapsed })
    }

    fn both(&self) -> [(&'static str, &Trajectory, &ScalarPotential, &MatrixPotential); 2] {
        [
            ("quadratic", &self.heat, &self.quadratic.0, &self.quadratic.1),
            ("soft", &self.soft, &self.soft_potentials.0, &self.soft_potentials.1),
        ]
    }
}

fn sup_error_vs_heat(traj: &Trajectory) -> f64 {
    let mut err: f64 = 0.0;
    for k in 0..=traj.steps() {
        let decay = (-PI * PI * traj.time(k)).exp();
        for (node, v) in traj.snapshots[k].iter().enumerate() {
            err = err.max((v - decay * (PI * traj.domain.coord(node, 0)).sin()).abs());
        }
    }
    err
}

fn criterion1(runs: &ReferenceRuns) -> Result<Vec<Check>> {
    let traj = &runs.heat;
    let h = traj.domain.h(0);
    let lambda = (2.0 - 2.0 * (PI * h).cos()) / (h * h);
    let mut eigen_err: f64 = 0.0;
    for k in 0..=traj.steps() {
        let factor = (1.0 + lambda * traj.tau).powi(-(k as i32));
        for (node, v) in traj.snapshots[k].iter().enumerate() {
            eigen_err = eigen_err.max((v - factor * (PI * traj.domain.coord(node, 0)).sin()).abs());
        }
    }
    let start = Instant::now();
    let g = sine_datum(CELLS)?;
    let (psi, f) = &runs.quadratic;
    let mut logs = Vec::new();
    for steps in [25, 50, 100] {
        let run = run_scheme(&g, psi, f, steps, HORIZON, &solver())?;
        logs.push(((HORIZON / steps as f64).ln(), sup_error_vs_heat(&run).ln()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
    let order = crate::fit::least_squares(&xs, &ys).map_or(f64::NAN, |f| f.slope);
    let runtime = (runs.heat_elapsed + start.elapsed()).as_secs_f64();
    Ok(vec![
        Check::at_most("eigen-decay sup error", eigen_err, 10.0 * TOL),
        Check::within("observed temporal order", order, 0.9, 1.1),
        Check::new("runtime below 10 s", if runtime < 10.0 { 1.0 } else { 0.0 }, "== 1", runtime < 10.0),
    ])
}

fn criterion2(runs: &ReferenceRuns) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, traj, psi, f) in runs.both() {
        let ledger = energy_ledger(traj, psi, f)?;
        let d = dissipation_from_ledger(&ledger);
        let e = second_identity_from_ledger(&ledger);
        let worst_d = d.defects.iter().map(|(_, v, s)| v - s).fold(f64::NEG_INFINITY, f64::max);
        let worst_e = e.defects.iter().map(|(_, v, s)| v - s).fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(&format!("{label}: max d_k - slack"), worst_d, 0.0));
        checks.push(Check::at_most(&format!("{label}: max e_k - slack"), worst_e, 0.0));
        checks.push(Check::at_most(&format!("{label}: summed form lhs - rhs"), d.summed_lhs - d.summed_rhs, 0.0));
        checks.push(Check::at_most(&format!("{label}: |telescoping gap|"), d.telescoping_gap.abs(), 1e-12));
    }
    Ok(checks)
}

fn criterion3(runs: &ReferenceRuns) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, traj, psi, f) in runs.both() {
        let ledger = energy_ledger(traj, psi, f)?;
        let b1 = bound1_from_ledger(&ledger, psi, f);
        let expected = bound1_constant(psi.theta(), f.lambda(), f.big_lambda());
        let pinned = if label == "quadratic" { 1.5 } else { 2.25 };
        checks.push(Check::at_most(&format!("{label}: |C1 - pinned value|"), (b1.constant - pinned).abs(), 0.0));
        checks.push(Check::at_most(&format!("{label}: |C1 - formula|"), (b1.constant - expected).abs(), 0.0));
        checks.push(Check::flag(&format!("{label}: bound 1 holds"), b1.pass));
        checks.push(Check::new(&format!("{label}: bound 1 ratio"), b1.ratio(), "reported", true));
        let b2 = discrete_bound2_check(traj, psi, f, traj.horizon() / 4.0)?;
        checks.push(Check::flag(&format!("{label}: bound 2 holds at d = T/4"), b2.pass));
        checks.push(Check::new(&format!("{label}: bound 2 ratio"), b2.ratio(), "reported", true));
    }
    Ok(checks)
}

/// Gradient descent on the step functional of a 1D chain with zero
/// Dirichlet ends, written out directly from its definition.
fn descent_oracle(v_prev: &[f64], h: f64, tau: f64, psi: &ScalarPotential) -> Vec<f64> {
    let n = v_prev.len();
    let grad = |v: &[f64]| -> Vec<f64> {
        let at = |i: isize| if i < 0 || i as usize >= n { 0.0 } else { v[i as usize] };
        (0..n)
            .map(|i| {
                let mut g = [0.0];
                psi.gradient(&[(v[i] - v_prev[i]) / tau], &mut g);
                let i = i as isize;
                h * g[0] + (2.0 * at(i) - at(i - 1) - at(i + 1)) / h
            })
            .collect()
    };
    let lipschitz = h * psi.big_theta() / tau + 4.0 / h;
    let mut v = v_prev.to_vec();
    for _ in 0..1_000_000 {
        let g = grad(&v);
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-12 {
            break;
        }
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= gi / lipschitz;
        }
    }
    v
}

fn criterion4() -> Result<Vec<Check>> {
    let (h, tau) = (0.1, 0.01);
    let psi = ScalarPotential::soft_quadratic(1, 0.5)?;
    let f = MatrixPotential::quadratic(1, 1);
    let domain = BoxDomain::new(vec![0.0], vec![4.0 * h], vec![3])?;
    let prev = SnapshotField::new(domain, 1, vec![1.0; 3])?;
    let (v, _) = solve_step(&prev, tau, &psi, &f, &solver())?;
    let oracle = descent_oracle(&prev.values, h, tau, &psi);
    let diff = v.values.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let single = BoxDomain::coarse(vec![0.0], vec![2.0 * h], vec![1])?;
    let prev = SnapshotField::new(single, 1, vec![1.0])?;
    let quadratic = ScalarPotential::quadratic(1);
    let (v1, _) = solve_step(&prev, tau, &quadratic, &f, &solver())?;
    let closed = 1.0 / (1.0 + 2.0 * tau / (h * h));
    Ok(vec![
        Check::at_most("3-node soft step vs descent oracle", diff, 1e-8),
        Check::at_most("single-node closed form error", (v1.values[0] - closed).abs(), 1e-12),
    ])
}

fn criterion5() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psi = ScalarPotential::soft_quadratic(2, 0.5)?;
    let (mut round_trip, mut fenchel): (f64, f64) = (0.0, 0.0);
    let mut g = vec![0.0; 2];
    for _ in 0..1000 {
        let w: Vec<f64> = loop {
            let w = vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            if w[0] * w[0] + w[1] * w[1] <= 100.0 {
                break w;
            }
        };
        psi.gradient(&w, &mut g);
        let back = legendre_dual_grad(&psi, &g, 1e-10)?;
        round_trip = round_trip.max(back.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let conj = legendre_value(&psi, &g, 1e-10)?;
        let pairing: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        fenchel = fenchel.max((psi.value(&w) + conj - pairing).abs());
        fenchel = fenchel.max((conj - dual_at_gradient(&psi, &w)).abs());
    }
    let mut checks = vec![
        Check::at_most("Legendre round trip", round_trip, 1e-8),
        Check::at_most("Fenchel identity", fenchel, 1e-8),
    ];
    let aniso = Family::AnisotropicQuadratic { matrix: vec![2.0, 0.5, 0.5, 1.0], lower: 0.79, upper: 2.21 };
    let families = [Family::Quadratic, Family::SoftQuadratic { epsilon: 0.5 }, aniso];
    for family in &families {
        let scalar = ScalarPotential::from_family(family, 2)?;
        let ok = verify_bounds(&scalar, 500, 5.0, 11)?.passed();
        checks.push(Check::flag(&format!("psi {} certified", family.label()), ok));
        let matrix = MatrixPotential::from_family(family, if matches!(family, Family::AnisotropicQuadratic { .. }) { 1 } else { 2 }, 2)?;
        let ok = verify_bounds(&matrix, 500, 5.0, 13)?.passed();
        checks.push(Check::flag(&format!("F {} certified", family.label()), ok));
    }
    let planted = ScalarPotential::quadratic(1).with_bounds(1.1, 1.1)?;
    let report = verify_bounds(&planted, 100, 1.0, 17)?;
    checks.push(Check::flag("planted theta = 1.1 rejected with witness", !report.passed()));
    Ok(checks)
}

fn criterion6(runs: &ReferenceRuns) -> Result<Vec<Check>> {
    let vartheta = 0.5;
    let mut checks = Vec::new();
    for (label, traj, _, _) in runs.both() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut accepted, mut attempts, mut failures) = (0, 0, 0);
        let mut min_margin = f64::INFINITY;
        while accepted < 200 && attempts < 20_000 {
            attempts += 1;
            let r: f64 = rng.gen_range(0.12..0.3);
            let x = rng.gen_range(r..1.0 - r);
            let half = 0.5 * r * r;
            let t = rng.gen_range(half..traj.horizon() - half);
            match backwards_decay_check(traj, &ParabolicCylinder::new(vec![x], t, r), vartheta) {
                Ok(check) => {
                    accepted += 1;
                    min_margin = min_margin.min(check.margin);
                    if !check.pass {
                        failures += 1;
                    }
                }
                Err(Error::Geometry(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        checks.push(Check::within(&format!("{label}: admissible cylinders"), accepted as f64, 200.0, 200.0));
        checks.push(Check::at_most(&format!("{label}: failing cylinders"), failures as f64, 0.0));
        checks.push(Check::new(&format!("{label}: min margin"), min_margin, "reported", true));
    }
    let c = backwards_decay_constant(1, 0.5);
    checks.push(Check::new("12/vartheta^(2(n+3)) at n = 1, vartheta = 1/2", c, "== 3072 (12 * 2^8)", c == 3072.0));
    let c = backwards_decay_constant(1, 0.25);
    checks.push(Check::new("same constant at vartheta = 1/4", c, "== 786432 (12 * 2^16)", c == 786432.0));
    Ok(checks)
}

/// Name of the sub-check that is not attainable with the default parameters
/// on the reference runs; see the project README.
pub const REGULAR_FRACTION_CHECK: &str = "fraction of admissible points flagged regular";

fn criterion7(runs: &ReferenceRuns) -> Result<Vec<Check>> {
    let alpha = 1.0;
    let params = thresholds(0.1, 0.5, 0.25, 10.0, 0.75, 1, alpha)?;
    let r0 = 0.1;
    let (mut regular, mut total) = (0usize, 0usize);
    let mut min_exponent = f64::INFINITY;
    let mut slopes = Vec::new();
    for (label, traj, _, _) in runs.both() {
        for i in 1..20 {
            for j in 1..20 {
                let (x, t) = (i as f64 * 0.05, j as f64 * 0.005);
                match decay_classification(traj, &[x], t, r0, &params, 3) {
                    Ok(ev) => {
                        total += 1;
                        if ev.flag == DecayFlag::Regular {
                            regular += 1;
                        }
                    }
                    Err(Error::Geometry(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        for i in 3..=7 {
            for t in [0.04, 0.05, 0.06] {
                let e = energy_scaling_exponent(traj, &[i as f64 / 10.0], t, &[0.1, 0.15, 0.2])?;
                min_exponent = min_exponent.min(e.unwrap_or(f64::INFINITY));
            }
        }
        let region = SpaceTimeRegion { lo: vec![0.2], hi: vec![0.8], t0: 0.03, t1: 0.06 };
        let hs: Vec<f64> = (0..4).map(|j| traj.tau * f64::from(1 << j)).collect();
        for q in [Quantity::Vt, Quantity::D2v] {
            let fq = fractional_quotient_exponent(traj, q, &region, &hs)?;
            slopes.push((label, q, fq.slope));
        }
    }
    let fraction = if total == 0 { 0.0 } else { regular as f64 / total as f64 };
    let mut checks = vec![
        Check::new(REGULAR_FRACTION_CHECK, fraction, ">= 0.99", fraction >= 0.99),
        Check::new("admissible sample points", total as f64, "> 0", total > 0),
        Check::new("rho1 at default parameters", params.rho1, "reported", true),
        Check::new("min E(r) scaling exponent", min_exponent, ">= 1.5", min_exponent >= 1.5),
    ];
    for (label, q, slope) in slopes {
        let name = match q {
            Quantity::Vt => format!("{label}: v_t"),
            _ => format!("{label}: D2v"),
        };
        let floor = quotient_floor(q, 1, alpha)?;
        checks.push(Check::within(&format!("{name} difference-quotient slope"), slope, 1.8, 2.2));
        checks.push(Check::new(&format!("{name} slope above floor"), slope, format!(">= {floor}"), slope >= floor));
    }
    Ok(checks)
}

/// Lattice of `(0, 1) x (0, t_len)` with spacing `r_min/4` in space and
/// `r_min^2/8` in time, ordered time-major.
pub fn box_fixture(r_min: f64, t_len: f64) -> Vec<SpaceTimePoint> {
    let (hx, ht) = (r_min / 4.0, r_min * r_min / 8.0);
    let nx = (1.0 / hx).round() as usize;
    let nt = (t_len / ht).round() as usize;
    let mut pts = Vec::with_capacity(nx * nt);
    for j in 0..nt {
        for i in 0..nx {
            pts.push(SpaceTimePoint::new(vec![(i as f64 + 0.5) * hx], (j as f64 + 0.5) * ht));
        }
    }
    pts
}

/// `(0, 1) x {t0}` sampled with spacing `r_min/4`.
pub fn slice_fixture(r_min: f64, t0: f64) -> Vec<SpaceTimePoint> {
    let hx = r_min / 4.0;
    let nx = (1.0 / hx).round() as usize;
    (0..nx).map(|i| SpaceTimePoint::new(vec![(i as f64 + 0.5) * hx], t0)).collect()
}

pub fn fixture_radii() -> Vec<f64> {
    (0..5).map(|i| 0.1 * 10f64.powf(-(i as f64) / 4.0)).collect()
}

fn criterion8() -> Result<Vec<Check>> {
    let start = Instant::now();
    let radii = fixture_radii();
    let r_min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let fixtures = [
        ("single point", vec![SpaceTimePoint::new(vec![0.5], 0.05)], 0.0, 0.05),
        ("time slice", slice_fixture(r_min, 0.05), 1.0, 0.15),
        ("full box", box_fixture(r_min, 0.1), 3.0, 0.2),
    ];
    let mut checks = Vec::new();
    for (label, pts, expected, tol) in fixtures {
        let d = parabolic_dimension(&pts, &radii)?;
        checks.push(Check::within(&format!("{label} dimension"), d.dimension, expected - tol, expected + tol));
        let drift = (d.dimension - d.dimension_without_finest).abs();
        checks.push(Check::at_most(&format!("{label} fit drift without finest radius"), drift, 0.05));
    }
    let runtime = start.elapsed().as_secs_f64();
    checks.push(Check::new("runtime below 30 s", if runtime < 30.0 { 1.0 } else { 0.0 }, "== 1", runtime < 30.0));
    Ok(checks)
}

fn criterion9() -> Result<Vec<Check>> {
    let p = thresholds(0.1, 0.5, 0.25, 1.0, 0.75, 1, 1.0)?;
    let b = singular_set_budget(1.0, 4.0, 1)?;
    Ok(vec![
        Check::new("epsilon1", p.epsilon1, "== 0.015625", p.epsilon1 == 0.015625),
        Check::new("mu", p.mu, "== 0.25", p.mu == 0.25),
        Check::new("dimension ceiling", b.bound, "== 2.75", b.bound == 2.75),
    ])
}

pub const TITLES: [&str; 10] = [
    "heat-system exactness and temporal order",
    "discrete identity suite",
    "global discrete bounds",
    "step-solver oracle",
    "Legendre and potential certification",
    "backwards decay",
    "regularity of smooth runs",
    "dimension estimator fixtures",
    "threshold arithmetic",
    "determinism of the suite report",
];

/// Runs criteria 1 through 9.
pub fn run_suite() -> Result<Vec<CriterionResult>> {
    let runs = ReferenceRuns::compute()?;
    Ok(vec![
        timed(1, TITLES[0], || criterion1(&runs))?,
        timed(2, TITLES[1], || criterion2(&runs))?,
        timed(3, TITLES[2], || criterion3(&runs))?,
        timed(4, TITLES[3], criterion4)?,
        timed(5, TITLES[4], criterion5)?,
        timed(6, TITLES[5], || criterion6(&runs))?,
        timed(7, TITLES[6], || criterion7(&runs))?,
        timed(8, TITLES[7], criterion8)?,
        timed(9, TITLES[8], criterion9)?,
    ])
}

/// `criterion,check,value,requirement,pass` for every check; timings excluded.
pub fn suite_csv(results: &[CriterionResult]) -> Result<String> {
    let rows: Vec<Vec<String>> = results
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c| {
                vec![r.id.to_string(), c.name.clone(), c.value.to_string(), c.requirement.clone(), c.pass.to_string()]
            })
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &["criterion", "check", "value", "requirement", "pass"], &rows)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Criterion 10 from two independent suite reports.
pub fn determinism(first: &str, second: &str) -> CriterionResult {
    let identical = first.as_bytes() == second.as_bytes();
    CriterionResult {
        id: 10,
        title: TITLES[9].into(),
        checks: vec![Check::flag("byte-identical CSV across two runs", identical)],
        elapsed: Duration::ZERO,
    }
}
