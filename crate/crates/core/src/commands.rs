//! Drivers behind the command-line subcommands. Each returns its report as
//! a string or file set so that the front end only handles arguments and
//! exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::energy::energy_ledger;
use crate::error::{Error, Result};
use crate::grid::{Quantity, Trajectory};
use crate::io::{write_csv, write_step_reports, RunConfig, TrajectoryFile};
use crate::potentials::{MatrixPotential, ScalarPotential};
use crate::regularity::{
    decay_classification, fractional_quotient_exponent, parabolic_dimension, singular_candidates, thresholds,
    DecayFlag, DecayParams, DimensionEstimate, SpaceTimePoint, SpaceTimeRegion,
};
use crate::stepper::run_scheme;
use crate::validation::{box_fixture, slice_fixture};

pub const TRAJECTORY_FILE: &str = "trajectory.dnf";
pub const STEP_REPORT_FILE: &str = "steps.jsonl";

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub trajectory: PathBuf,
    pub step_reports: PathBuf,
    /// Hex SHA-256 of the trajectory file.
    pub checksum: String,
    pub steps: usize,
}

/// Runs the scheme for `cfg` and writes the trajectory and step reports into
/// `output_dir`, or the configured directory when `None`.
pub fn solve(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<SolveOutput> {
    let (psi, f) = cfg.potentials()?;
    let g = cfg.initial_datum()?;
    let traj = run_scheme(&g, &psi, &f, cfg.time.steps, cfg.time.horizon, &cfg.solver)?;
    let dir = output_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolved_output_dir());
    fs::create_dir_all(&dir)?;
    let bytes = TrajectoryFile::encode(&traj);
    let trajectory = dir.join(TRAJECTORY_FILE);
    fs::write(&trajectory, &bytes)?;
    let step_reports = dir.join(STEP_REPORT_FILE);
    let mut out = fs::File::create(&step_reports)?;
    write_step_reports(&mut out, &traj.reports)?;
    Ok(SolveOutput { trajectory, step_reports, checksum: hex(&Sha256::digest(&bytes)), steps: traj.steps() })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Rebuilds the potentials recorded in a trajectory header.
pub fn potentials_of(traj: &Trajectory) -> Result<(ScalarPotential, MatrixPotential)> {
    let (Some(psi), Some(f)) = (&traj.meta.psi, &traj.meta.f) else {
        return Err(Error::config("trajectory", "file records no built-in potential families"));
    };
    let b = &traj.meta.bounds;
    let psi = ScalarPotential::from_family(psi, traj.m)?.with_bounds(b.theta, b.big_theta)?;
    let f = MatrixPotential::from_family(f, traj.m, traj.domain.dim())?.with_bounds(b.lambda, b.big_lambda, b.alpha)?;
    Ok((psi, f))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Per-step energy ledger as CSV.
pub fn energy_report(traj: &Trajectory) -> Result<String> {
    let (psi, f) = potentials_of(traj)?;
    let ledger = energy_ledger(traj, &psi, &f)?;
    let rows: Vec<Vec<String>> = ledger
        .entries
        .iter()
        .map(|e| {
            vec![
                e.k.to_string(),
                e.t.to_string(),
                e.potential.to_string(),
                e.dissipation.to_string(),
                e.dual.to_string(),
                opt(e.d),
                opt(e.e),
                e.slack.to_string(),
                e.increment.to_string(),
                e.gradient_increment.to_string(),
                e.dirichlet.to_string(),
                (e.d_pass() && e.e_pass()).to_string(),
            ]
        })
        .collect();
    csv_string(
        &[
            "k",
            "t",
            "potential",
            "dissipation",
            "dual",
            "d",
            "e",
            "slack",
            "increment",
            "gradient_increment",
            "dirichlet",
            "pass",
        ],
        &rows,
    )
}

/// Decay parameters with the defaults `L = 10`, `vartheta = 1/4`,
/// `epsilon = 0.1`, `rho = 0.5`, `gamma = 0.75`. `gamma` is taken relative
/// to the Hoelder exponent `alpha` of the trajectory, so the window
/// `(alpha/2, alpha)` becomes `(1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySettings {
    pub l: f64,
    pub vartheta: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl Default for DecaySettings {
    fn default() -> Self {
        DecaySettings { l: 10.0, vartheta: 0.25, epsilon: 0.1, rho: 0.5, gamma: 0.75 }
    }
}

impl DecaySettings {
    pub fn params(&self, n: usize, alpha: f64) -> Result<DecayParams> {
        thresholds(self.epsilon, self.rho, self.vartheta, self.l, self.gamma * alpha, n, alpha)
    }
}

/// `per_axis` interior points on every spatial axis and `times` interior
/// times, equally spaced; ordered time-major.
pub fn center_lattice(traj: &Trajectory, per_axis: usize, times: usize) -> Vec<SpaceTimePoint> {
    let domain = &traj.domain;
    let n = domain.dim();
    let spatial: usize = per_axis.pow(n as u32);
    let mut out = Vec::with_capacity(spatial * times);
    for j in 1..=times {
        let t = traj.horizon() * j as f64 / (times + 1) as f64;
        for s in 0..spatial {
            let mut rem = s;
            let x: Vec<f64> = (0..n)
                .map(|a| {
                    let i = rem % per_axis + 1;
                    rem /= per_axis;
                    domain.lo()[a] + (domain.hi()[a] - domain.lo()[a]) * i as f64 / (per_axis + 1) as f64
                })
                .collect();
            out.push(SpaceTimePoint::new(x, t));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RegularityMap {
    pub csv: String,
    pub admissible: usize,
    pub regular: usize,
}

/// Classifies every admissible center of the lattice; inadmissible centers
/// are skipped. Fails with a geometry error when none is admissible.
pub fn regularity_map(
    traj: &Trajectory,
    centers: &[SpaceTimePoint],
    r0: f64,
    scales: usize,
    settings: &DecaySettings,
) -> Result<RegularityMap> {
    let params = settings.params(traj.domain.dim(), traj.meta.bounds.alpha)?;
    let mut rows = Vec::new();
    let mut regular = 0;
    for c in centers {
        let ev = match decay_classification(traj, &c.x, c.t, r0, &params, scales) {
            Ok(ev) => ev,
            Err(Error::Geometry(_)) => continue,
            Err(e) => return Err(e),
        };
        if ev.flag == DecayFlag::Regular {
            regular += 1;
        }
        let flag = if ev.flag == DecayFlag::Regular { "regular" } else { "unverified" };
        rows.push(vec![
            join(&c.x),
            c.t.to_string(),
            flag.to_string(),
            ev.energies[0].1.to_string(),
            ev.checked.to_string(),
            ev.truncated.to_string(),
            opt(ev.exponent),
            ev.reason.unwrap_or_default(),
        ]);
    }
    if rows.is_empty() {
        return Err(Error::Geometry(format!("no admissible center for r0 = {r0}")));
    }
    let admissible = rows.len();
    let csv = csv_string(&["x", "t", "flag", "energy", "checked", "truncated", "exponent", "reason"], &rows)?;
    Ok(RegularityMap { csv, admissible, regular })
}

fn join(x: &[f64]) -> String {
    x.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Synthetic point sets with known parabolic dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Point,
    Slice,
    Box,
}

pub fn fixture_points(fixture: Fixture, r_min: f64) -> Vec<SpaceTimePoint> {
    match fixture {
        Fixture::Point => vec![SpaceTimePoint::new(vec![0.5], 0.05)],
        Fixture::Slice => slice_fixture(r_min, 0.05),
        Fixture::Box => box_fixture(r_min, 0.1),
    }
}

/// Reads points from CSV with a header row; every row is `x_1, ..., x_n, t`.
pub fn read_points(path: &Path) -> Result<Vec<SpaceTimePoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(crate::io::csv_error)?;
    let mut points = Vec::new();
    for (i, row) in reader.deserialize::<Vec<f64>>().enumerate() {
        let values = row.map_err(|e| Error::config(format!("points[{i}]"), e.to_string()))?;
        if values.len() < 2 {
            return Err(Error::config(format!("points[{i}]"), "need at least one coordinate and a time"));
        }
        let (x, t) = values.split_at(values.len() - 1);
        points.push(SpaceTimePoint::new(x.to_vec(), t[0]));
    }
    Ok(points)
}

/// Candidate singular points of a trajectory: lattice centers whose local
/// energy at `r_min` exceeds `threshold`.
pub fn trajectory_candidates(
    traj: &Trajectory,
    centers: &[SpaceTimePoint],
    r_min: f64,
    threshold: f64,
) -> Result<Vec<SpaceTimePoint>> {
    let admissible: Vec<SpaceTimePoint> = centers
        .iter()
        .filter(|c| crate::regularity::local_energy(traj, &crate::grid::ParabolicCylinder::new(c.x.clone(), c.t, r_min)).is_ok())
        .cloned()
        .collect();
    singular_candidates(traj, &admissible, r_min, threshold, None)
}

pub fn dimension_report(points: &[SpaceTimePoint], radii: &[f64]) -> Result<(DimensionEstimate, String)> {
    let est = parabolic_dimension(points, radii)?;
    let rows: Vec<Vec<String>> =
        est.radii.iter().zip(&est.counts).map(|(r, c)| vec![r.to_string(), c.to_string()]).collect();
    let csv = csv_string(&["radius", "count"], &rows)?;
    Ok((est, csv))
}

pub fn parse_quantity(name: &str) -> Result<Quantity> {
    match name {
        "vt" => Ok(Quantity::Vt),
        "d2v" => Ok(Quantity::D2v),
        other => Err(Error::config("field", format!("expected `vt` or `d2v`, got `{other}`"))),
    }
}

/// `D_h` for `h = multiple * tau` as CSV, with the fitted slope.
pub fn frac_exponent(
    traj: &Trajectory,
    q: Quantity,
    region: &SpaceTimeRegion,
    multiples: &[usize],
) -> Result<(f64, Option<f64>, String)> {
    let hs: Vec<f64> = multiples.iter().map(|&j| j as f64 * traj.tau).collect();
    let fq = fractional_quotient_exponent(traj, q, region, &hs)?;
    let rows: Vec<Vec<String>> = fq.hs.iter().zip(&fq.values).map(|(h, d)| vec![h.to_string(), d.to_string()]).collect();
    let csv = csv_string(&["h", "quotient"], &rows)?;
    Ok((fq.slope, fq.slope_without_finest, csv))
}

/// Loads a trajectory file; the result carries the file's potentials.
pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    TrajectoryFile::read(path)
}
