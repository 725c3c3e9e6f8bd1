//! Box domains with zero Dirichlet data, snapshot fields, difference operators,
//! quadrature and parabolic cylinders.
//!
//! Nodes are the interior lattice points, numbered row-major with the last axis
//! fastest. A field with `m` components stores component `c` of node `i` at
//! `values[i * m + c]`. Derived tensors follow the same node-major layout:
//! a gradient stores `m x n` entries per node, a Hessian `m x n x n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{ConvexityBounds, Family};
use crate::stepper::StepReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
}

impl BoxDomain {
    /// `cells[a]` counts interior nodes along axis `a`; spacing is `(hi - lo) / (cells + 1)`.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        Self::with_min_cells(lo, hi, cells, 3)
    }

    /// Like [`BoxDomain::new`] but accepting a single interior node per axis.
    /// Meant for hand-checkable solver instances; cylinder analytics still
    /// need three resolved nodes per axis.
    pub fn coarse(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        Self::with_min_cells(lo, hi, cells, 1)
    }

    fn with_min_cells(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>, min: usize) -> Result<Self> {
        let n = cells.len();
        if n == 0 || lo.len() != n || hi.len() != n {
            return Err(Error::config("domain", "lo, hi and cells need one entry per axis"));
        }
        for a in 0..n {
            if cells[a] < min {
                return Err(Error::config(format!("domain.cells[{a}]"), format!("need at least {min} interior nodes")));
            }
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return Err(Error::config(format!("domain.hi[{a}]"), "need finite lo < hi"));
            }
        }
        Ok(BoxDomain { lo, hi, cells })
    }

    /// `(0,1)^n` with `cells` interior nodes per axis.
    pub fn unit(n: usize, cells: usize) -> Result<Self> {
        BoxDomain::new(vec![0.0; n], vec![1.0; n], vec![cells; n])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.cells[axis] + 1) as f64
    }
    pub fn node_count(&self) -> usize {
        self.cells.iter().product()
    }
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.h(a)).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        let mut rest = node;
        for a in (0..self.dim()).rev() {
            idx[a] = rest % self.cells[a];
            rest /= self.cells[a];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().map(|(a, i)| i * self.stride(a)).sum()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let i = (node / self.stride(axis)) % self.cells[axis];
        self.lo[axis] + (i + 1) as f64 * self.h(axis)
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(node, a)).collect()
    }

    /// Neighbour `delta` steps along `axis`, or `None` on or beyond the boundary.
    pub fn offset(&self, node: usize, axis: usize, delta: i64) -> Option<usize> {
        let i = ((node / self.stride(axis)) % self.cells[axis]) as i64 + delta;
        if i < 0 || i >= self.cells[axis] as i64 {
            None
        } else {
            Some((node as i64 + delta * self.stride(axis) as i64) as usize)
        }
    }
}

/// Nodal values of an `R^m`-valued function vanishing on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotField {
    pub domain: BoxDomain,
    pub m: usize,
    pub values: Vec<f64>,
}

impl SnapshotField {
    pub fn new(domain: BoxDomain, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || values.len() != domain.node_count() * m {
            return Err(Error::config("field", "value count must equal nodes * m"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("field has non-finite entries".into()));
        }
        Ok(SnapshotField { domain, m, values })
    }

    pub fn zeros(domain: &BoxDomain, m: usize) -> Self {
        SnapshotField { domain: domain.clone(), m, values: vec![0.0; domain.node_count() * m] }
    }

    /// Samples `f(x, out)` at every interior node.
    pub fn from_fn(domain: &BoxDomain, m: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; domain.node_count() * m];
        for node in 0..domain.node_count() {
            f(&domain.coords(node), &mut values[node * m..(node + 1) * m]);
        }
        SnapshotField { domain: domain.clone(), m, values }
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.m..(node + 1) * self.m]
    }
}

fn value_or_zero(values: &[f64], m: usize, node: Option<usize>, c: usize) -> f64 {
    node.map_or(0.0, |i| values[i * m + c])
}

/// Centered gradient at one node, written as `m x n` into `out`. Missing
/// neighbours take the zero boundary value.
pub fn gradient_at(domain: &BoxDomain, m: usize, values: &[f64], node: usize, out: &mut [f64]) {
    let n = domain.dim();
    for a in 0..n {
        let up = domain.offset(node, a, 1);
        let down = domain.offset(node, a, -1);
        let h2 = 2.0 * domain.h(a);
        for c in 0..m {
            out[c * n + a] = (value_or_zero(values, m, up, c) - value_or_zero(values, m, down, c)) / h2;
        }
    }
}

/// Second differences at one node, written as `m x n x n` into `out`. Mixed
/// derivatives use the four diagonal neighbours.
pub fn hessian_at(domain: &BoxDomain, m: usize, values: &[f64], node: usize, out: &mut [f64]) {
    let n = domain.dim();
    for a in 0..n {
        let ha = domain.h(a);
        let up = domain.offset(node, a, 1);
        let down = domain.offset(node, a, -1);
        for c in 0..m {
            let v = values[node * m + c];
            out[(c * n + a) * n + a] =
                (value_or_zero(values, m, up, c) - 2.0 * v + value_or_zero(values, m, down, c)) / (ha * ha);
        }
        for b in a + 1..n {
            let hb = domain.h(b);
            let corner = |da: i64, db: i64| domain.offset(node, a, da).and_then(|p| domain.offset(p, b, db));
            let (pp, pm, mp, mm) = (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1));
            for c in 0..m {
                let d = (value_or_zero(values, m, pp, c) - value_or_zero(values, m, pm, c)
                    - value_or_zero(values, m, mp, c)
                    + value_or_zero(values, m, mm, c))
                    / (4.0 * ha * hb);
                out[(c * n + a) * n + b] = d;
                out[(c * n + b) * n + a] = d;
            }
        }
    }
}

/// Per-node `m x n` centered gradient of a snapshot.
pub fn gradient(field: &SnapshotField) -> Vec<f64> {
    let (m, n) = (field.m, field.domain.dim());
    let mut out = vec![0.0; field.domain.node_count() * m * n];
    for (node, chunk) in out.chunks_mut(m * n).enumerate() {
        gradient_at(&field.domain, m, &field.values, node, chunk);
    }
    out
}

/// Per-node `m x n x n` second differences of a snapshot.
pub fn hessian_field(field: &SnapshotField) -> Vec<f64> {
    let (m, n) = (field.m, field.domain.dim());
    let mut out = vec![0.0; field.domain.node_count() * m * n * n];
    for (node, chunk) in out.chunks_mut(m * n * n).enumerate() {
        hessian_at(&field.domain, m, &field.values, node, chunk);
    }
    out
}

/// Midpoint quadrature of a per-node scalar over the domain.
pub fn integrate(domain: &BoxDomain, per_node: &[f64]) -> f64 {
    per_node.iter().sum::<f64>() * domain.cell_volume()
}

/// One-sided difference quotients at the `2^n` corners of every cell of the
/// full lattice (boundary nodes included, carrying zero).
///
/// `integral(G) = sum over corners of weight * G(D_c v)` is the quadrature
/// the time scheme uses for `F(Dv)`. With a quadratic integrand it reproduces
/// the standard `2n+1`-point Laplacian, and its transpose is the discrete
/// divergence.
#[derive(Debug, Clone)]
pub struct StaggeredGradient {
    n: usize,
    spacing: Vec<f64>,
    /// Per corner and axis: the (upper, lower) node of the difference, `-1` on the boundary.
    stencil: Vec<[i64; 2]>,
    weight: f64,
}

impl StaggeredGradient {
    pub fn new(domain: &BoxDomain) -> Self {
        let n = domain.dim();
        let spacing: Vec<f64> = (0..n).map(|a| domain.h(a)).collect();
        let cell_counts: Vec<usize> = domain.cells().iter().map(|c| c + 1).collect();
        let total_cells: usize = cell_counts.iter().product();
        let corners = 1usize << n;
        let mut stencil = Vec::with_capacity(total_cells * corners * n);
        // extended lattice coordinate e maps to interior index e-1 when 1 <= e <= cells
        let node_of = |ext: &[usize]| -> i64 {
            let mut idx = 0usize;
            for a in 0..n {
                if ext[a] == 0 || ext[a] > domain.cells()[a] {
                    return -1;
                }
                idx = idx * domain.cells()[a] + (ext[a] - 1);
            }
            idx as i64
        };
        let mut lower = vec![0usize; n];
        for cell in 0..total_cells {
            let mut rest = cell;
            for a in (0..n).rev() {
                lower[a] = rest % cell_counts[a];
                rest /= cell_counts[a];
            }
            for corner in 0..corners {
                let base: Vec<usize> = (0..n).map(|a| lower[a] + ((corner >> a) & 1)).collect();
                for a in 0..n {
                    let mut up = base.clone();
                    let mut down = base.clone();
                    up[a] = lower[a] + 1;
                    down[a] = lower[a];
                    stencil.push([node_of(&up), node_of(&down)]);
                }
            }
        }
        StaggeredGradient {
            n,
            spacing,
            stencil,
            weight: domain.cell_volume() / corners as f64,
        }
    }

    pub fn corner_count(&self) -> usize {
        self.stencil.len() / self.n
    }

    /// Quadrature weight of every corner.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Writes the `m x n` difference quotient of every corner into `out`.
    pub fn apply(&self, values: &[f64], m: usize, out: &mut [f64]) {
        let n = self.n;
        for (corner, chunk) in out.chunks_mut(m * n).enumerate() {
            for a in 0..n {
                let [up, down] = self.stencil[corner * n + a];
                let h = self.spacing[a];
                for c in 0..m {
                    let vu = if up >= 0 { values[up as usize * m + c] } else { 0.0 };
                    let vd = if down >= 0 { values[down as usize * m + c] } else { 0.0 };
                    chunk[c * n + a] = (vu - vd) / h;
                }
            }
        }
    }

    /// `out += scale * D^T g` for per-corner `m x n` data `g`.
    pub fn apply_transpose_add(&self, g: &[f64], m: usize, scale: f64, out: &mut [f64]) {
        let n = self.n;
        for (corner, chunk) in g.chunks(m * n).enumerate() {
            for a in 0..n {
                let [up, down] = self.stencil[corner * n + a];
                let h = self.spacing[a];
                for c in 0..m {
                    let s = scale * chunk[c * n + a] / h;
                    if up >= 0 {
                        out[up as usize * m + c] += s;
                    }
                    if down >= 0 {
                        out[down as usize * m + c] -= s;
                    }
                }
            }
        }
    }

    /// For each axis of `corner`, the coefficient `+-1/h` attached to `node`, if present.
    pub(crate) fn coefficients(&self, corner: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |a| {
            let [up, down] = self.stencil[corner * n + a];
            let h = self.spacing[a];
            [(up, 1.0 / h), (down, -1.0 / h)]
                .into_iter()
                .filter(|(node, _)| *node >= 0)
                .map(move |(node, coef)| (node as usize, a, coef))
        })
    }

    /// `sum over corners of weight * g(D_c v)` for a per-corner integrand.
    pub fn integrate(&self, values: &[f64], m: usize, g: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut grads = vec![0.0; self.corner_count() * m * self.n];
        self.apply(values, m, &mut grads);
        grads.chunks(m * self.n).map(g).sum::<f64>() * self.weight
    }
}

/// Potentials and tolerance a trajectory was computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub psi: Option<Family>,
    pub f: Option<Family>,
    pub bounds: ConvexityBounds,
    pub tol: f64,
}

impl Default for TrajectoryMeta {
    fn default() -> Self {
        TrajectoryMeta { psi: None, f: None, bounds: ConvexityBounds::unit(), tol: 0.0 }
    }
}

/// Snapshots `v^0 .. v^N` at times `k * tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub domain: BoxDomain,
    pub m: usize,
    pub tau: f64,
    pub snapshots: Vec<Vec<f64>>,
    pub meta: TrajectoryMeta,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn new(domain: BoxDomain, m: usize, tau: f64, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        if snapshots.len() < 2 {
            return Err(Error::config("snapshots", "need at least v^0 and v^1"));
        }
        let len = domain.node_count() * m;
        if snapshots.iter().any(|s| s.len() != len) {
            return Err(Error::config("snapshots", "every snapshot needs nodes * m values"));
        }
        Ok(Trajectory { domain, m, tau, snapshots, meta: TrajectoryMeta::default(), reports: Vec::new() })
    }

    /// Samples `f(x, t, out)` at `t = k * tau`, `k = 0..=steps`, ignoring boundary values.
    pub fn from_fn(
        domain: &BoxDomain,
        m: usize,
        tau: f64,
        steps: usize,
        f: impl Fn(&[f64], f64, &mut [f64]),
    ) -> Result<Self> {
        let snapshots = (0..=steps)
            .map(|k| SnapshotField::from_fn(domain, m, |x, out| f(x, k as f64 * tau, out)).values)
            .collect();
        Trajectory::new(domain.clone(), m, tau, snapshots)
    }

    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }
    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.tau
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }
    pub fn field(&self, k: usize) -> SnapshotField {
        SnapshotField { domain: self.domain.clone(), m: self.m, values: self.snapshots[k].clone() }
    }
}

/// Backward difference `(v^k - v^{k-1}) / tau`, the time derivative the scheme enforces.
pub fn time_derivative(traj: &Trajectory, k: usize) -> Result<SnapshotField> {
    if k == 0 || k > traj.steps() {
        return Err(Error::config("k", format!("step index must lie in 1..={}", traj.steps())));
    }
    let values = traj.snapshots[k]
        .iter()
        .zip(&traj.snapshots[k - 1])
        .map(|(a, b)| (a - b) / traj.tau)
        .collect();
    Ok(SnapshotField { domain: traj.domain.clone(), m: traj.m, values })
}

/// `Q_r(x, t) = B_r(x) x (t - r^2/2, t + r^2/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub x: Vec<f64>,
    pub t: f64,
    pub r: f64,
}

impl ParabolicCylinder {
    pub fn new(x: Vec<f64>, t: f64, r: f64) -> Self {
        ParabolicCylinder { x, t, r }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ParabolicCylinder { x: self.x.clone(), t: self.t, r: self.r * factor }
    }
}

/// Discrete point set of a cylinder: nodes strictly inside the ball and steps
/// `k >= 1` strictly inside the time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderPoints {
    pub nodes: Vec<usize>,
    pub steps: Vec<usize>,
}

impl CylinderPoints {
    pub fn count(&self) -> usize {
        self.nodes.len() * self.steps.len()
    }
}

const CONTAINMENT_SLACK: f64 = 1e-12;

/// Resolves the discrete point set of `cyl`, requiring containment in
/// `U x (0, T)`, at least three distinct node coordinates per axis and at
/// least three time steps.
pub fn cylinder_points(traj: &Trajectory, cyl: &ParabolicCylinder) -> Result<CylinderPoints> {
    let domain = &traj.domain;
    let n = domain.dim();
    if cyl.x.len() != n {
        return Err(Error::Geometry(format!("cylinder center has {} coordinates, domain has {n}", cyl.x.len())));
    }
    if !(cyl.r > 0.0) {
        return Err(Error::Geometry("cylinder radius must be positive".into()));
    }
    for a in 0..n {
        if cyl.x[a] - cyl.r < domain.lo()[a] - CONTAINMENT_SLACK || cyl.x[a] + cyl.r > domain.hi()[a] + CONTAINMENT_SLACK {
            return Err(Error::Geometry(format!("cylinder leaves the domain along axis {a}")));
        }
    }
    let half = 0.5 * cyl.r * cyl.r;
    if cyl.t - half < -CONTAINMENT_SLACK || cyl.t + half > traj.horizon() + CONTAINMENT_SLACK {
        return Err(Error::Geometry("cylinder leaves the time interval".into()));
    }
    let r2 = cyl.r * cyl.r;
    let nodes: Vec<usize> = (0..domain.node_count())
        .filter(|&node| {
            let d2: f64 = (0..n).map(|a| (domain.coord(node, a) - cyl.x[a]).powi(2)).sum();
            d2 < r2
        })
        .collect();
    for a in 0..n {
        let mut distinct: Vec<usize> = nodes.iter().map(|&node| (node / domain.stride(a)) % domain.cells()[a]).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::Geometry(format!(
                "radius {} resolves only {} nodes along axis {a}",
                cyl.r,
                distinct.len()
            )));
        }
    }
    let steps: Vec<usize> = (1..=traj.steps()).filter(|&k| (traj.time(k) - cyl.t).abs() < half).collect();
    if steps.len() < 3 {
        return Err(Error::Geometry(format!("radius {} resolves only {} time steps", cyl.r, steps.len())));
    }
    Ok(CylinderPoints { nodes, steps })
}

/// Derived fields averaged over cylinders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Vt,
    Dv,
    D2v,
}

impl Quantity {
    pub fn width(self, m: usize, n: usize) -> usize {
        match self {
            Quantity::Vt => m,
            Quantity::Dv => m * n,
            Quantity::D2v => m * n * n,
        }
    }
}

/// Evaluates `q` at step `k >= 1` and `node`.
pub fn quantity_at(traj: &Trajectory, q: Quantity, k: usize, node: usize, out: &mut [f64]) {
    let m = traj.m;
    match q {
        Quantity::Vt => {
            for c in 0..m {
                out[c] = (traj.snapshots[k][node * m + c] - traj.snapshots[k - 1][node * m + c]) / traj.tau;
            }
        }
        Quantity::Dv => gradient_at(&traj.domain, m, &traj.snapshots[k], node, out),
        Quantity::D2v => hessian_at(&traj.domain, m, &traj.snapshots[k], node, out),
    }
}

/// Samples of `q` over a cylinder's point set, step-major.
pub fn cylinder_samples(traj: &Trajectory, q: Quantity, pts: &CylinderPoints) -> Vec<f64> {
    let w = q.width(traj.m, traj.domain.dim());
    let mut out = vec![0.0; pts.count() * w];
    let mut i = 0;
    for &k in &pts.steps {
        for &node in &pts.nodes {
            quantity_at(traj, q, k, node, &mut out[i * w..(i + 1) * w]);
            i += 1;
        }
    }
    out
}

/// Discrete mean of `q` over `cyl` (point sum divided by point count).
pub fn cylinder_average(traj: &Trajectory, q: Quantity, cyl: &ParabolicCylinder) -> Result<Vec<f64>> {
    let pts = cylinder_points(traj, cyl)?;
    Ok(mean_of(&cylinder_samples(traj, q, &pts), q.width(traj.m, traj.domain.dim())))
}

/// Space-time quadrature `sum f(k, node) * cellvol * tau` over a cylinder.
pub fn integrate_cylinder(
    traj: &Trajectory,
    cyl: &ParabolicCylinder,
    mut f: impl FnMut(usize, usize) -> f64,
) -> Result<f64> {
    let pts = cylinder_points(traj, cyl)?;
    let mut sum = 0.0;
    for &k in &pts.steps {
        for &node in &pts.nodes {
            sum += f(k, node);
        }
    }
    Ok(sum * traj.domain.cell_volume() * traj.tau)
}

pub(crate) fn mean_of(samples: &[f64], width: usize) -> Vec<f64> {
    let count = samples.len() / width;
    let mut mean = vec![0.0; width];
    for chunk in samples.chunks(width) {
        for (m, s) in mean.iter_mut().zip(chunk) {
            *m += s;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_numbering_round_trips() {
        let d = BoxDomain::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![4, 5]).unwrap();
        for node in 0..d.node_count() {
            assert_eq!(d.node_index(&d.multi_index(node)), node);
        }
        assert_eq!(d.stride(0), 5);
        assert!((d.h(1) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn offsets_stop_at_boundary() {
        let d = BoxDomain::unit(2, 3).unwrap();
        assert_eq!(d.offset(0, 0, -1), None);
        assert_eq!(d.offset(0, 1, 1), Some(1));
        assert_eq!(d.offset(2, 1, 1), None);
    }

    #[test]
    fn too_few_cells_rejected() {
        assert!(BoxDomain::unit(1, 2).is_err());
    }

    #[test]
    fn staggered_corner_count() {
        let d = BoxDomain::unit(2, 3).unwrap();
        let g = StaggeredGradient::new(&d);
        assert_eq!(g.corner_count(), 16 * 4);
        assert!((g.weight() - 0.25 * 0.25 / 4.0).abs() < 1e-18);
    }
}
