//! Local energy, decay classification, fractional time differentiability and
//! parabolic dimension estimates.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::least_squares;
use crate::grid::{cylinder_points, cylinder_samples, mean_of, quantity_at, ParabolicCylinder, Quantity, Trajectory};
use crate::potentials::norm;

/// `E(x, t, r) = T1 + T2 + T3` over `Q_r(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalEnergySample {
    pub cyl: ParabolicCylinder,
    /// Mean squared oscillation of `v_t`.
    pub t1: f64,
    /// Mean of `|(Dv - (Dv)_Q - (D^2v)_Q (y - x)) / r|^2`.
    pub t2: f64,
    /// Mean squared oscillation of `D^2v`.
    pub t3: f64,
    pub e: f64,
}

/// Cylinder means of `v_t`, `Dv` and `D^2v`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderMeans {
    pub vt: Vec<f64>,
    pub dv: Vec<f64>,
    pub d2v: Vec<f64>,
}

pub fn local_energy(traj: &Trajectory, cyl: &ParabolicCylinder) -> Result<LocalEnergySample> {
    local_energy_with_means(traj, cyl).map(|(s, _)| s)
}

pub fn local_energy_with_means(traj: &Trajectory, cyl: &ParabolicCylinder) -> Result<(LocalEnergySample, CylinderMeans)> {
    let pts = cylinder_points(traj, cyl)?;
    let (m, n) = (traj.m, traj.domain.dim());
    let count = pts.count() as f64;

    let vt = cylinder_samples(traj, Quantity::Vt, &pts);
    let dv = cylinder_samples(traj, Quantity::Dv, &pts);
    let d2v = cylinder_samples(traj, Quantity::D2v, &pts);
    let vt_mean = mean_of(&vt, m);
    let dv_mean = mean_of(&dv, m * n);
    let d2v_mean = mean_of(&d2v, m * n * n);

    let oscillation = |samples: &[f64], mean: &[f64]| -> f64 {
        samples
            .chunks(mean.len())
            .map(|s| s.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / count
    };
    let t1 = oscillation(&vt, &vt_mean);
    let t3 = oscillation(&d2v, &d2v_mean);

    let offsets: Vec<Vec<f64>> = pts
        .nodes
        .iter()
        .map(|&node| (0..n).map(|a| traj.domain.coord(node, a) - cyl.x[a]).collect())
        .collect();
    let mut t2 = 0.0;
    for (i, g) in dv.chunks(m * n).enumerate() {
        let y = &offsets[i % pts.nodes.len()];
        for c in 0..m {
            for a in 0..n {
                let affine: f64 = (0..n).map(|b| d2v_mean[(c * n + a) * n + b] * y[b]).sum();
                t2 += ((g[c * n + a] - dv_mean[c * n + a] - affine) / cyl.r).powi(2);
            }
        }
    }
    t2 /= count;
    let sample = LocalEnergySample { cyl: cyl.clone(), t1, t2, t3, e: t1 + t2 + t3 };
    Ok((sample, CylinderMeans { vt: vt_mean, dv: dv_mean, d2v: d2v_mean }))
}

/// `12 / vartheta^(2(n+3))`.
pub fn backwards_decay_constant(n: usize, vartheta: f64) -> f64 {
    12.0 / vartheta.powi(2 * (n as i32 + 3))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardsDecay {
    pub inner: f64,
    pub outer: f64,
    pub constant: f64,
    /// `rhs + slack - lhs`.
    pub margin: f64,
    pub pass: bool,
}

/// `E(x, t, vartheta r) <= 12/vartheta^(2(n+3)) E(x, t, r)`.
pub fn backwards_decay_check(traj: &Trajectory, cyl: &ParabolicCylinder, vartheta: f64) -> Result<BackwardsDecay> {
    if !(vartheta > 0.0 && vartheta < 1.0) {
        return Err(Error::config("vartheta", "must lie in (0, 1)"));
    }
    let outer = local_energy(traj, cyl)?.e;
    let inner = local_energy(traj, &cyl.scaled(vartheta))?.e;
    let constant = backwards_decay_constant(traj.domain.dim(), vartheta);
    let rhs = constant * outer;
    let margin = rhs + 1e-12 * (1.0 + rhs) - inner;
    Ok(BackwardsDecay { inner, outer, constant, margin, pass: margin >= 0.0 })
}

/// Parameters of the iterated decay test with their derived thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayParams {
    pub l: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub vartheta: f64,
    pub n: usize,
    /// `min{epsilon, vartheta^(n/2+1) L/8}`.
    pub epsilon1: f64,
    /// `min{rho, (vartheta^(2(n+3)) epsilon1^2 / (24 L))^(1/(2 gamma))}`.
    pub rho1: f64,
    /// `ln(1/2) / (2 ln vartheta)`.
    pub mu: f64,
}

/// Validates the parameter windows and derives `epsilon1`, `rho1` and `mu`.
///
/// `gamma` must lie in the open interval `(alpha/2, alpha)` and `vartheta`
/// in `(0, (1/2)^(1/alpha))`. `epsilon` and `rho` may equal the upper end.
pub fn thresholds(epsilon: f64, rho: f64, vartheta: f64, l: f64, gamma: f64, n: usize, alpha: f64) -> Result<DecayParams> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1]"));
    }
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::config("L", "must be positive"));
    }
    if !(gamma > alpha / 2.0 && gamma < alpha) {
        return Err(Error::config("gamma", format!("must lie in the open interval ({}, {alpha})", alpha / 2.0)));
    }
    let cap = 0.5f64.powf(1.0 / alpha);
    if !(vartheta > 0.0 && vartheta < cap) {
        return Err(Error::config("vartheta", format!("must lie in the open interval (0, {cap})")));
    }
    if !(epsilon > 0.0 && epsilon <= cap) {
        return Err(Error::config("epsilon", format!("must lie in (0, {cap}]")));
    }
    if !(rho > 0.0 && rho <= cap) {
        return Err(Error::config("rho", format!("must lie in (0, {cap}]")));
    }
    let epsilon1 = epsilon.min(vartheta.powf(n as f64 / 2.0 + 1.0) * l / 8.0);
    let rho1 = rho.min(
        (vartheta.powi(2 * (n as i32 + 3)) * epsilon1 * epsilon1 / (24.0 * l)).powf(1.0 / (2.0 * gamma)),
    );
    let mu = 0.5 * 0.5f64.ln() / vartheta.ln();
    Ok(DecayParams { l, gamma, alpha, epsilon, rho, vartheta, n, epsilon1, rho1, mu })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayFlag {
    Regular,
    Unverified,
}

/// Evidence behind a decay classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEvidence {
    pub flag: DecayFlag,
    pub reason: Option<String>,
    /// `(r, E(x, t, r))` for `r0` and every resolved scale `vartheta^k r0`.
    pub energies: Vec<(f64, f64)>,
    /// Scales `k >= 1` at which the decay was verified.
    pub checked: usize,
    /// Set when the resolution floor cut the scale sequence short.
    pub truncated: bool,
    /// Slope of `ln E` against `ln r`, when at least two positive energies exist.
    pub exponent: Option<f64>,
    pub two_mu: f64,
    /// Whether `r0 < rho1`; the threshold is typically far below grid resolution.
    pub below_rho1: bool,
}

/// Tests the entry conditions at `Q_{r0}(x, t)` and the geometric decay
/// `E(vartheta^k r0) <= 2^-k epsilon1^2` for `k = 1..=scales`.
///
/// The point is regular when the entry holds, at least one scale is resolved
/// and every resolved scale decays.
pub fn decay_classification(
    traj: &Trajectory,
    x: &[f64],
    t: f64,
    r0: f64,
    params: &DecayParams,
    scales: usize,
) -> Result<DecayEvidence> {
    let cyl = ParabolicCylinder::new(x.to_vec(), t, r0);
    let (sample, means) = local_energy_with_means(traj, &cyl)?;
    let eps2 = params.epsilon1 * params.epsilon1;
    let mut evidence = DecayEvidence {
        flag: DecayFlag::Unverified,
        reason: None,
        energies: vec![(r0, sample.e)],
        checked: 0,
        truncated: false,
        exponent: None,
        two_mu: 2.0 * params.mu,
        below_rho1: r0 < params.rho1,
    };
    let half = params.l / 2.0;
    let magnitudes = [("v_t", norm(&means.vt)), ("Dv", norm(&means.dv)), ("D2v", norm(&means.d2v))];
    if let Some((name, value)) = magnitudes.iter().find(|(_, v)| *v >= half) {
        evidence.reason = Some(format!("entry condition: |({name})_Q| = {value:.6} >= L/2"));
        return Ok(evidence);
    }
    if sample.e >= eps2 {
        evidence.reason = Some(format!("entry condition: E = {:.6e} >= epsilon1^2", sample.e));
        return Ok(evidence);
    }
    let mut failed = None;
    for k in 1..=scales {
        let r = params.vartheta.powi(k as i32) * r0;
        let e = match local_energy(traj, &cyl.scaled(r / r0)) {
            Ok(s) => s.e,
            Err(Error::Geometry(_)) => {
                evidence.truncated = true;
                break;
            }
            Err(err) => return Err(err),
        };
        evidence.energies.push((r, e));
        evidence.checked = k;
        if e > eps2 * 0.5f64.powi(k as i32) && failed.is_none() {
            failed = Some(k);
        }
    }
    evidence.exponent = decay_exponent(&evidence.energies);
    if let Some(k) = failed {
        evidence.reason = Some(format!("decay fails at scale {k}"));
    } else if evidence.checked == 0 {
        evidence.reason = Some("resolution floor reached before the first scale".into());
    } else {
        evidence.flag = DecayFlag::Regular;
    }
    Ok(evidence)
}

fn decay_exponent(energies: &[(f64, f64)]) -> Option<f64> {
    let positive: Vec<&(f64, f64)> = energies.iter().filter(|(_, e)| *e > 0.0).collect();
    let xs: Vec<f64> = positive.iter().map(|(r, _)| r.ln()).collect();
    let ys: Vec<f64> = positive.iter().map(|(_, e)| e.ln()).collect();
    least_squares(&xs, &ys).map(|f| f.slope)
}

/// Slope of `ln E(x, t, r)` against `ln r` over the given radii.
pub fn energy_scaling_exponent(traj: &Trajectory, x: &[f64], t: f64, radii: &[f64]) -> Result<Option<f64>> {
    let mut energies = Vec::with_capacity(radii.len());
    for &r in radii {
        energies.push((r, local_energy(traj, &ParabolicCylinder::new(x.to_vec(), t, r))?.e));
    }
    Ok(decay_exponent(&energies))
}

/// Space-time box `V x [t0, t1]` with `V = [lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
}

impl SpaceTimeRegion {
    fn resolve(&self, traj: &Trajectory) -> Result<(Vec<usize>, Vec<usize>)> {
        let domain = &traj.domain;
        let n = domain.dim();
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::config("region", "extent dimension does not match the domain"));
        }
        for a in 0..n {
            if !(self.lo[a] >= domain.lo()[a] && self.hi[a] <= domain.hi()[a] && self.lo[a] < self.hi[a]) {
                return Err(Error::Geometry(format!("region is not inside the domain along axis {a}")));
            }
        }
        if !(self.t0 > 0.0 && self.t0 < self.t1 && self.t1 < traj.horizon()) {
            return Err(Error::Geometry("region needs 0 < t0 < t1 < T".into()));
        }
        let nodes: Vec<usize> = (0..domain.node_count())
            .filter(|&node| (0..n).all(|a| (self.lo[a]..=self.hi[a]).contains(&domain.coord(node, a))))
            .collect();
        let eps = 1e-9 * traj.tau;
        let steps: Vec<usize> = (1..=traj.steps())
            .filter(|&k| traj.time(k) >= self.t0 - eps && traj.time(k) <= self.t1 + eps)
            .collect();
        if nodes.is_empty() || steps.len() < 2 {
            return Err(Error::Geometry("region contains too few grid points".into()));
        }
        Ok((nodes, steps))
    }
}

/// `p` of the higher integrability estimate: 4 for `n = 1`, 3.9 for `n = 2`
/// (any exponent below 4) and `2 + 4/n` otherwise.
pub fn p_for_dimension(n: usize) -> f64 {
    match n {
        1 => 4.0,
        2 => 3.9,
        _ => 2.0 + 4.0 / n as f64,
    }
}

/// Smallest admissible difference-quotient exponent: `1/2 - 1/p` for `v_t`
/// and `alpha/2` for `D^2v`.
pub fn quotient_floor(q: Quantity, n: usize, alpha: f64) -> Result<f64> {
    match q {
        Quantity::Vt => Ok(0.5 - 1.0 / p_for_dimension(n)),
        Quantity::D2v => Ok(alpha / 2.0),
        Quantity::Dv => Err(Error::config("field", "only vt and d2v carry fractional time estimates")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalQuotient {
    pub hs: Vec<f64>,
    pub values: Vec<f64>,
    /// `+inf` when every `D_h` vanishes.
    pub slope: f64,
    /// Slope without the smallest `h`.
    pub slope_without_finest: Option<f64>,
}

fn whole_steps(traj: &Trajectory, h: f64) -> Result<usize> {
    let j = (h / traj.tau).round();
    if j < 1.0 || (j * traj.tau - h).abs() > 1e-9 * h {
        return Err(Error::config("h_list", format!("h = {h} is not a positive multiple of tau = {}", traj.tau)));
    }
    Ok(j as usize)
}

fn quantity_values(traj: &Trajectory, q: Quantity, k: usize, nodes: &[usize]) -> Vec<f64> {
    let w = q.width(traj.m, traj.domain.dim());
    let mut out = vec![0.0; nodes.len() * w];
    for (i, &node) in nodes.iter().enumerate() {
        quantity_at(traj, q, k, node, &mut out[i * w..(i + 1) * w]);
    }
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `D_h = int_{t0}^{t1} int_V |w(t + h) - w(t)|^2` for each `h`, with the
/// fitted slope of `ln D_h` against `ln h`.
pub fn fractional_quotient_exponent(
    traj: &Trajectory,
    q: Quantity,
    region: &SpaceTimeRegion,
    h_list: &[f64],
) -> Result<FractionalQuotient> {
    quotient_floor(q, 1, 1.0)?;
    let window = 0.5 * 1f64.min(region.t0).min(traj.horizon() - region.t1);
    if h_list.len() < 2 {
        return Err(Error::config("h_list", "need at least two values"));
    }
    if let Some(h) = h_list.iter().find(|&&h| !(h > 0.0 && h < window)) {
        return Err(Error::config("h_list", format!("h = {h} outside the window (0, {window})")));
    }
    let (nodes, steps) = region.resolve(traj)?;
    let weight = traj.domain.cell_volume() * traj.tau;
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut values = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let j = whole_steps(traj, h)?;
        let mut sum = 0.0;
        for &k in steps.iter().filter(|&&k| k + j <= traj.steps()) {
            let a = cache.entry(k).or_insert_with(|| quantity_values(traj, q, k, &nodes)).clone();
            let b = cache.entry(k + j).or_insert_with(|| quantity_values(traj, q, k + j, &nodes));
            sum += squared_distance(&a, b);
        }
        values.push(sum * weight);
    }
    let slope_of = |hs: &[f64], ds: &[f64]| -> Result<f64> {
        if ds.iter().all(|&d| d == 0.0) {
            return Ok(f64::INFINITY);
        }
        if ds.iter().any(|&d| d <= 0.0) {
            return Err(Error::Numeric("difference quotients vanish at some but not all h".into()));
        }
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
        least_squares(&xs, &ys).map(|f| f.slope).ok_or_else(|| Error::Numeric("h values have no spread".into()))
    };
    let slope = slope_of(h_list, &values)?;
    let finest = h_list
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("h_list is non-empty");
    let slope_without_finest = if h_list.len() >= 3 {
        let hs: Vec<f64> = h_list.iter().enumerate().filter(|(i, _)| *i != finest).map(|(_, h)| *h).collect();
        let ds: Vec<f64> = values.iter().enumerate().filter(|(i, _)| *i != finest).map(|(_, d)| *d).collect();
        Some(slope_of(&hs, &ds)?)
    } else {
        None
    };
    Ok(FractionalQuotient { hs: h_list.to_vec(), values, slope, slope_without_finest })
}

/// `sum_{s != t} int_V |w(t) - w(s)|^2 / |t - s|^(1 + beta)` with weight
/// `tau^2` per pair of time levels.
pub fn gagliardo_time_seminorm(
    traj: &Trajectory,
    q: Quantity,
    beta: f64,
    region: &SpaceTimeRegion,
    alpha: f64,
) -> Result<f64> {
    let cap = quotient_floor(q, traj.domain.dim(), alpha)?;
    if !(beta > 0.0 && beta < cap) {
        return Err(Error::config("beta", format!("must lie in the open interval (0, {cap})")));
    }
    let (nodes, steps) = region.resolve(traj)?;
    let fields: Vec<Vec<f64>> = steps.iter().map(|&k| quantity_values(traj, q, k, &nodes)).collect();
    let mut sum = 0.0;
    for i in 0..steps.len() {
        for j in i + 1..steps.len() {
            let gap = (traj.time(steps[j]) - traj.time(steps[i])).abs();
            sum += 2.0 * squared_distance(&fields[i], &fields[j]) / gap.powf(1.0 + beta);
        }
    }
    Ok(sum * traj.domain.cell_volume() * traj.tau * traj.tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub p: f64,
    pub vt_lp: f64,
    pub vt_l2: f64,
    pub d2v_lp: f64,
    pub d2v_l2: f64,
}

impl IntegrabilityReport {
    /// `||v_t||_p / ||v_t||_2` and `||D^2v||_p / ||D^2v||_2`, zero for vanishing fields.
    pub fn ratios(&self) -> (f64, f64) {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        (ratio(self.vt_lp, self.vt_l2), ratio(self.d2v_lp, self.d2v_l2))
    }
}

/// Discrete `L^p` and `L^2` norms of `v_t` and `D^2v` over a region.
pub fn higher_integrability_report(traj: &Trajectory, region: &SpaceTimeRegion) -> Result<IntegrabilityReport> {
    let p = p_for_dimension(traj.domain.dim());
    let (nodes, steps) = region.resolve(traj)?;
    let weight = traj.domain.cell_volume() * traj.tau;
    let norms = |q: Quantity| {
        let (mut sp, mut s2) = (0.0, 0.0);
        for &k in &steps {
            for w in quantity_values(traj, q, k, &nodes).chunks(q.width(traj.m, traj.domain.dim())) {
                let a2: f64 = w.iter().map(|x| x * x).sum();
                s2 += a2;
                sp += a2.powf(p / 2.0);
            }
        }
        ((sp * weight).powf(1.0 / p), (s2 * weight).sqrt())
    };
    let (vt_lp, vt_l2) = norms(Quantity::Vt);
    let (d2v_lp, d2v_l2) = norms(Quantity::D2v);
    Ok(IntegrabilityReport { p, vt_lp, vt_l2, d2v_lp, d2v_l2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        SpaceTimePoint { x, t }
    }
}

/// Centers whose `E(x, t, r_min)` exceeds `threshold`, or whose cylinder
/// averages reach `cap` when one is given.
pub fn singular_candidates(
    traj: &Trajectory,
    centers: &[SpaceTimePoint],
    r_min: f64,
    threshold: f64,
    cap: Option<f64>,
) -> Result<Vec<SpaceTimePoint>> {
    let mut flagged = Vec::new();
    for c in centers {
        let (sample, means) = local_energy_with_means(traj, &ParabolicCylinder::new(c.x.clone(), c.t, r_min))?;
        let large = cap.is_some_and(|l| [&means.vt, &means.dv, &means.d2v].iter().any(|v| norm(v) >= l));
        if sample.e > threshold || large {
            flagged.push(c.clone());
        }
    }
    Ok(flagged)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    /// Ascending radii.
    pub radii: Vec<f64>,
    /// Cover sizes, non-increasing in `r`.
    pub counts: Vec<usize>,
    pub dimension: f64,
    pub residual: f64,
    /// Fit without the smallest radius.
    pub dimension_without_finest: f64,
    /// Set when the point set is empty and the dimension is 0 by convention.
    pub empty: bool,
}

/// Greedy cover size: points are visited in input order and every point not
/// yet covered becomes the center of a new cylinder.
pub fn greedy_cover_count(points: &[SpaceTimePoint], r: f64) -> usize {
    let half = 0.5 * r * r;
    let key = |p: &SpaceTimePoint| -> Vec<i64> {
        let mut k: Vec<i64> = p.x.iter().map(|x| (x / r).floor() as i64).collect();
        k.push((p.t / half).floor() as i64);
        k
    };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut centers = 0;
    let mut neighbour = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let base = key(p);
        let dims = base.len();
        let mut covered = false;
        'search: for code in 0..3usize.pow(dims as u32) {
            neighbour.clear();
            let mut c = code;
            for b in &base {
                neighbour.push(b + (c % 3) as i64 - 1);
                c /= 3;
            }
            if let Some(list) = buckets.get(&neighbour) {
                for &j in list {
                    let q = &points[j];
                    if (p.t - q.t).abs() < half && squared_distance(&p.x, &q.x) < r * r {
                        covered = true;
                        break 'search;
                    }
                }
            }
        }
        if !covered {
            buckets.entry(base).or_default().push(i);
            centers += 1;
        }
    }
    centers
}

/// Fits the parabolic dimension as the slope of `ln N(r)` against `ln(1/r)`.
///
/// Greedy counts are made monotone by a running minimum over smaller radii,
/// since any cover by smaller cylinders is also a cover at a larger radius.
pub fn parabolic_dimension(points: &[SpaceTimePoint], radii: &[f64]) -> Result<DimensionEstimate> {
    if radii.len() < 3 {
        return Err(Error::config("radii", "need at least three radii"));
    }
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::config("radii", "radii must be positive"));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 3 || sorted[sorted.len() - 1] < 10.0 * sorted[0] * (1.0 - 1e-12) {
        return Err(Error::config("radii", "need at least three distinct radii spanning a decade"));
    }
    let n = points.first().map_or(0, |p| p.x.len());
    if points.iter().any(|p| p.x.len() != n) {
        return Err(Error::config("points", "points have mixed spatial dimension"));
    }
    if points.is_empty() {
        return Ok(DimensionEstimate {
            counts: vec![0; sorted.len()],
            radii: sorted,
            dimension: 0.0,
            residual: 0.0,
            dimension_without_finest: 0.0,
            empty: true,
        });
    }
    let mut counts = Vec::with_capacity(sorted.len());
    let mut best = usize::MAX;
    for &r in &sorted {
        best = best.min(greedy_cover_count(points, r));
        counts.push(best);
    }
    let fit = |skip: usize| {
        let xs: Vec<f64> = sorted[skip..].iter().map(|r| -r.ln()).collect();
        let ys: Vec<f64> = counts[skip..].iter().map(|&c| (c as f64).ln()).collect();
        least_squares(&xs, &ys).expect("radii are distinct")
    };
    let full = fit(0);
    let clamp = |s: f64| s.clamp(0.0, n as f64 + 2.0);
    Ok(DimensionEstimate {
        dimension: clamp(full.slope),
        residual: full.residual,
        dimension_without_finest: clamp(fit(1).slope),
        radii: sorted,
        counts,
        empty: false,
    })
}

/// Split of the exponent budget `min{alpha/2, 1/2 - 1/p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionBudget {
    /// Half of the budget.
    pub beta: f64,
    /// A quarter of the budget, so that `beta + epsilon` stays below it.
    pub epsilon: f64,
    /// `n + 2 - 2 beta`.
    pub bound: f64,
}

pub fn singular_set_budget(alpha: f64, p: f64, n: usize) -> Result<DimensionBudget> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1]"));
    }
    if !(p > 2.0) {
        return Err(Error::config("p", "must exceed 2"));
    }
    let budget = (alpha / 2.0).min(0.5 - 1.0 / p);
    let beta = budget / 2.0;
    Ok(DimensionBudget { beta, epsilon: budget / 4.0, bound: n as f64 + 2.0 - 2.0 * beta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_arithmetic() {
        let p = thresholds(0.1, 0.5, 0.25, 1.0, 0.75, 1, 1.0).unwrap();
        assert_eq!(p.epsilon1, 0.015625);
        assert_eq!(p.mu, 0.25);
        assert!(thresholds(0.1, 0.5, 0.25, 1.0, 1.0, 1, 1.0).is_err());
        assert!(thresholds(0.1, 0.5, 0.5, 1.0, 0.75, 1, 1.0).is_err());
    }

    #[test]
    fn budget_arithmetic() {
        let b = singular_set_budget(1.0, 4.0, 1).unwrap();
        assert_eq!(b.beta, 0.125);
        assert_eq!(b.bound, 2.75);
        assert_eq!(backwards_decay_constant(1, 0.5), 3072.0);
        assert_eq!(backwards_decay_constant(1, 0.25), 786432.0);
    }

    #[test]
    fn greedy_cover_on_a_line() {
        let pts: Vec<SpaceTimePoint> = (0..100).map(|i| SpaceTimePoint::new(vec![i as f64 * 0.01], 0.0)).collect();
        assert!((9..=11).contains(&greedy_cover_count(&pts, 0.1)));
        assert_eq!(greedy_cover_count(&pts[..1], 0.1), 1);
    }
}
