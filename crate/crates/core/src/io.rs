//! Run configuration, the binary trajectory format and report writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{BoxDomain, SnapshotField, Trajectory, TrajectoryMeta};
use crate::potentials::{Family, MatrixPotential, ScalarPotential};
use crate::stepper::{SolverConfig, StepReport};

/// Environment variable that overrides `output_dir` of a run configuration.
pub const OUTPUT_DIR_ENV: &str = "DNP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
    /// Number of solution components `m`.
    #[serde(default = "one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub psi: Family,
    pub f: Family,
}

/// Initial datum, sampled at interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `amplitude * prod_a sin(mode pi (x_a - lo_a) / (hi_a - lo_a))` in every component.
    Sine {
        #[serde(default = "unit_amplitude")]
        amplitude: f64,
        #[serde(default = "one")]
        mode: usize,
    },
    /// `amplitude * exp(1 - 1/(1 - s^2))` for `s = |x - center| / radius < 1`.
    Bump { center: Vec<f64>, radius: f64, #[serde(default = "unit_amplitude")] amplitude: f64 },
    /// Sine series with seeded coefficients decaying like `1/k^2`.
    RandomSmooth {
        #[serde(default = "default_modes")]
        modes: usize,
    },
}

fn unit_amplitude() -> f64 {
    1.0
}

fn default_modes() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub domain: DomainSpec,
    pub time: TimeSpec,
    pub potentials: PotentialSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub initial: Profile,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses and validates a TOML document; errors name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            Error::config(if path.is_empty() || path == "." { "<root>".into() } else { path }, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if i64::try_from(self.seed).is_err() {
            return Err(Error::config("seed", "must fit in a TOML integer (at most 2^63 - 1)"));
        }
        let d = &self.domain;
        let n = d.cells.len();
        if n == 0 || d.lo.len() != n || d.hi.len() != n {
            return Err(Error::config("domain", "lo, hi and cells need one entry per axis"));
        }
        for a in 0..n {
            if d.cells[a] < 3 {
                return Err(Error::config(format!("domain.cells[{a}]"), "need at least 3 interior nodes"));
            }
            if !(d.lo[a].is_finite() && d.hi[a].is_finite() && d.lo[a] < d.hi[a]) {
                return Err(Error::config(format!("domain.hi[{a}]"), "need finite lo < hi"));
            }
        }
        if d.components == 0 {
            return Err(Error::config("domain.components", "must be at least 1"));
        }
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            return Err(Error::config("time.horizon", "must be positive"));
        }
        if self.time.steps == 0 {
            return Err(Error::config("time.steps", "must be at least 1"));
        }
        self.solver.validate()?;
        self.potentials().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("potentials.{path}"), message),
            other => other,
        })?;
        match &self.initial {
            Profile::Bump { center, radius, amplitude } => {
                if center.len() != n {
                    return Err(Error::config("initial.center", "needs one entry per axis"));
                }
                if !(*radius > 0.0) || !amplitude.is_finite() {
                    return Err(Error::config("initial.radius", "must be positive with finite amplitude"));
                }
            }
            Profile::Sine { amplitude, mode } => {
                if *mode == 0 || !amplitude.is_finite() {
                    return Err(Error::config("initial.mode", "need mode >= 1 and finite amplitude"));
                }
            }
            Profile::RandomSmooth { modes } if *modes == 0 => {
                return Err(Error::config("initial.modes", "must be at least 1"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn box_domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.domain.lo.clone(), self.domain.hi.clone(), self.domain.cells.clone())
    }

    pub fn potentials(&self) -> Result<(ScalarPotential, MatrixPotential)> {
        let (m, n) = (self.domain.components, self.domain.cells.len());
        Ok((
            ScalarPotential::from_family(&self.potentials.psi, m)
                .map_err(|e| prefix(e, "psi"))?,
            MatrixPotential::from_family(&self.potentials.f, m, n).map_err(|e| prefix(e, "f"))?,
        ))
    }

    pub fn initial_datum(&self) -> Result<SnapshotField> {
        let domain = self.box_domain()?;
        Ok(sample_profile(&self.initial, &domain, self.domain.components, self.seed))
    }

    /// `output_dir`, unless the environment override is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone())
    }
}

fn prefix(e: Error, name: &str) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{name}.{path}"), message),
        other => other,
    }
}

pub fn sample_profile(profile: &Profile, domain: &BoxDomain, m: usize, seed: u64) -> SnapshotField {
    let unit = |x: &[f64], a: usize| (x[a] - domain.lo()[a]) / (domain.hi()[a] - domain.lo()[a]);
    match profile {
        Profile::Zero => SnapshotField::zeros(domain, m),
        Profile::Sine { amplitude, mode } => SnapshotField::from_fn(domain, m, |x, out| {
            let v: f64 = (0..x.len()).map(|a| (*mode as f64 * std::f64::consts::PI * unit(x, a)).sin()).product();
            out.iter_mut().for_each(|o| *o = amplitude * v);
        }),
        Profile::Bump { center, radius, amplitude } => SnapshotField::from_fn(domain, m, |x, out| {
            let s2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (radius * radius);
            let v = if s2 < 1.0 { amplitude * (1.0 - 1.0 / (1.0 - s2)).exp() } else { 0.0 };
            out.iter_mut().for_each(|o| *o = v);
        }),
        Profile::RandomSmooth { modes } => {
            let n = domain.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coefficients indexed by (component, multi-index of modes)
            let per = modes.pow(n as u32);
            let coeffs: Vec<f64> = (0..m * per).map(|_| rng.gen_range(-1.0..1.0)).collect();
            SnapshotField::from_fn(domain, m, |x, out| {
                for (c, o) in out.iter_mut().enumerate() {
                    let mut sum = 0.0;
                    for idx in 0..per {
                        let mut rest = idx;
                        let mut term = coeffs[c * per + idx];
                        let mut k2 = 0.0;
                        for a in 0..n {
                            let k = (rest % modes + 1) as f64;
                            rest /= modes;
                            k2 += k * k;
                            term *= (k * std::f64::consts::PI * unit(x, a)).sin();
                        }
                        sum += term / k2;
                    }
                    *o = sum;
                }
            })
        }
    }
}

const MAGIC: &[u8; 4] = b"DNF1";
const VERSION: u32 = 1;

/// Binary layout, all little-endian:
///
/// ```text
/// "DNF1" | version u32 | n u32 | m u32 | cells u64 x n | lo f64 x n | hi f64 x n
/// | T f64 | N u64 | tau f64 | tol f64 | meta_len u64 | meta (JSON) | payload | sha256
/// ```
///
/// The payload holds `N + 1` snapshots in node order, and the trailer is
/// the SHA-256 digest of every preceding byte.
pub struct TrajectoryFile;

impl TrajectoryFile {
    pub fn encode(traj: &Trajectory) -> Vec<u8> {
        let domain = &traj.domain;
        let n = domain.dim();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&(traj.m as u32).to_le_bytes());
        for &c in domain.cells() {
            buf.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for &x in domain.lo().iter().chain(domain.hi()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&traj.horizon().to_le_bytes());
        buf.extend_from_slice(&(traj.steps() as u64).to_le_bytes());
        buf.extend_from_slice(&traj.tau.to_le_bytes());
        buf.extend_from_slice(&traj.meta.tol.to_le_bytes());
        let meta = serde_json::to_vec(&traj.meta).expect("metadata always serializes");
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        for snap in &traj.snapshots {
            for v in snap {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Trajectory> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Corrupt("file too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if body[..4] != MAGIC[..] {
            return Err(Error::Corrupt("bad magic".into()));
        }
        if Sha256::digest(body)[..] != trailer[..] {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        if n == 0 || m == 0 || n > 8 {
            return Err(Error::Corrupt(format!("implausible dimensions n = {n}, m = {m}")));
        }
        let cells: Vec<usize> = (0..n).map(|_| r.u64().map(|c| c as usize)).collect::<Result<_>>()?;
        let lo: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
        let hi: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
        let horizon = r.f64()?;
        let steps = r.u64()? as usize;
        let tau = r.f64()?;
        let tol = r.f64()?;
        let meta_len = r.u64()? as usize;
        let meta: TrajectoryMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
        let domain = BoxDomain::coarse(lo, hi, cells).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let len = domain.node_count() * m;
        let expected = (steps + 1).checked_mul(len).and_then(|v| v.checked_mul(8));
        if expected != Some(body.len() - r.pos) {
            return Err(Error::Corrupt("payload length does not match the header".into()));
        }
        let snapshots: Vec<Vec<f64>> =
            (0..=steps).map(|_| (0..len).map(|_| r.f64()).collect::<Result<_>>()).collect::<Result<_>>()?;
        if (steps as f64 * tau - horizon).abs() > 1e-12 * horizon.abs().max(1.0) || meta.tol != tol {
            return Err(Error::Corrupt("header fields are inconsistent".into()));
        }
        let mut traj = Trajectory::new(domain, m, tau, snapshots).map_err(|e| Error::Corrupt(e.to_string()))?;
        traj.meta = meta;
        Ok(traj)
    }

    pub fn write(path: &Path, traj: &Trajectory) -> Result<()> {
        fs::write(path, Self::encode(traj))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Trajectory> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("truncated header".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

/// One JSON object per step: `k`, `iterations`, `residual` and the
/// functional values along the Newton iterates.
pub fn write_step_reports(out: &mut impl Write, reports: &[StepReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a header and rows of already formatted fields.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config("csv", format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
[domain]
lo = [0.0]
hi = [1.0]
cells = [9]
[time]
horizon = 0.1
steps = 10
[potentials.psi]
family = "quadratic"
[potentials.f]
family = "soft-quadratic"
epsilon = 0.5
[initial]
profile = "sine"
"#;

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = SAMPLE.replace("steps = 10", "steps = \"ten\"");
        match RunConfig::from_toml(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "time.steps"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = SAMPLE.replace("cells = [9]", "cells = [2]");
        match RunConfig::from_toml(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "domain.cells[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
