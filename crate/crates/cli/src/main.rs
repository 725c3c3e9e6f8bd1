//! `dnp`: solve doubly nonlinear parabolic systems and analyze the runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnp_core::commands::{self, DecaySettings, Fixture};
use dnp_core::io::{RunConfig, OUTPUT_DIR_ENV};
use dnp_core::regularity::SpaceTimeRegion;
use dnp_core::validation::{determinism, run_suite, suite_csv};
use dnp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dnp", version, about = "Implicit scheme and regularity diagnostics for D psi(v_t) = div DF(Dv)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the implicit scheme for a TOML configuration.
    Solve {
        config: PathBuf,
        /// Directory for trajectory.dnf and steps.jsonl; overrides the config.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Per-step energy ledger of a trajectory as CSV.
    EnergyReport {
        trajectory: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Decay classification on a lattice of interior centers as CSV.
    RegularityMap {
        trajectory: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        r0: f64,
        /// Number of scales vartheta^k r0 to verify.
        #[arg(long, default_value_t = 3)]
        scales: usize,
        #[command(flatten)]
        lattice: Lattice,
        #[command(flatten)]
        decay: Decay,
        #[command(flatten)]
        out: Output,
    },
    /// Parabolic box-counting dimension of a point set.
    Dimension {
        /// CSV with a header and rows `x_1, ..., x_n, t`.
        #[arg(long, conflicts_with_all = ["fixture", "trajectory"])]
        points: Option<PathBuf>,
        /// Synthetic point set with known dimension.
        #[arg(long, value_enum, conflicts_with = "trajectory")]
        fixture: Option<FixtureArg>,
        /// Use lattice centers whose local energy at the smallest radius exceeds `--threshold`.
        #[arg(long, requires = "threshold")]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Cover radii; at least three spanning a decade.
        #[arg(long, value_delimiter = ',', default_values_t = default_radii())]
        radii: Vec<f64>,
        #[command(flatten)]
        lattice: Lattice,
        #[command(flatten)]
        out: Output,
    },
    /// Time difference quotients of v_t or D^2 v and their fitted exponent.
    FracExponent {
        trajectory: PathBuf,
        #[arg(long, value_parser = ["vt", "d2v"], default_value = "vt")]
        field: String,
        /// Spatial lower corner, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        lo: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        hi: Vec<f64>,
        #[arg(long)]
        t0: f64,
        #[arg(long)]
        t1: f64,
        /// Shifts h as multiples of the time step.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
        steps: Vec<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Run the acceptance suite and print one line per criterion.
    Validate {
        /// Write the per-check CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Output {
    /// Write CSV to this file instead of standard output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Lattice {
    /// Interior centers per spatial axis.
    #[arg(long, default_value_t = 19)]
    per_axis: usize,
    /// Interior center times.
    #[arg(long, default_value_t = 19)]
    times: usize,
}

#[derive(Args)]
struct Decay {
    #[arg(long, default_value_t = 10.0)]
    big_l: f64,
    #[arg(long, default_value_t = 0.25)]
    vartheta: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Relative to alpha; must lie in (1/2, 1).
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArg {
    Point,
    Slice,
    Box,
}

fn default_radii() -> Vec<f64> {
    dnp_core::validation::fixture_radii()
}

fn emit(out: &Output, text: &str) -> Result<()> {
    match &out.out {
        Some(path) => Ok(fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<dnp_core::grid::Trajectory> {
    commands::load_trajectory(path)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { config, output_dir } => {
            let cfg = RunConfig::load(&config)?;
            let result = commands::solve(&cfg, output_dir.as_deref())?;
            println!("steps      {}", result.steps);
            println!("trajectory {}", result.trajectory.display());
            println!("reports    {}", result.step_reports.display());
            println!("sha256     {}", result.checksum);
        }
        Command::EnergyReport { trajectory, out } => {
            emit(&out, &commands::energy_report(&load(&trajectory)?)?)?;
        }
        Command::RegularityMap { trajectory, r0, scales, lattice, decay, out } => {
            let traj = load(&trajectory)?;
            let centers = commands::center_lattice(&traj, lattice.per_axis, lattice.times);
            let settings = DecaySettings {
                l: decay.big_l,
                vartheta: decay.vartheta,
                epsilon: decay.epsilon,
                rho: decay.rho,
                gamma: decay.gamma,
            };
            let map = commands::regularity_map(&traj, &centers, r0, scales, &settings)?;
            emit(&out, &map.csv)?;
            eprintln!("regular {} of {} admissible centers", map.regular, map.admissible);
        }
        Command::Dimension { points, fixture, trajectory, threshold, radii, lattice, out } => {
            let r_min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
            let pts = if let Some(path) = points {
                commands::read_points(&path)?
            } else if let Some(f) = fixture {
                let f = match f {
                    FixtureArg::Point => Fixture::Point,
                    FixtureArg::Slice => Fixture::Slice,
                    FixtureArg::Box => Fixture::Box,
                };
                commands::fixture_points(f, r_min)
            } else if let (Some(path), Some(threshold)) = (trajectory, threshold) {
                let traj = load(&path)?;
                let centers = commands::center_lattice(&traj, lattice.per_axis, lattice.times);
                commands::trajectory_candidates(&traj, &centers, r_min, threshold)?
            } else {
                return Err(Error::config("dimension", "give one of --points, --fixture or --trajectory"));
            };
            let (est, csv) = commands::dimension_report(&pts, &radii)?;
            emit(&out, &csv)?;
            eprintln!(
                "dimension {} (without finest radius {}, residual {}){}",
                est.dimension,
                est.dimension_without_finest,
                est.residual,
                if est.empty { ", empty point set" } else { "" }
            );
        }
        Command::FracExponent { trajectory, field, lo, hi, t0, t1, steps, out } => {
            let traj = load(&trajectory)?;
            let q = commands::parse_quantity(&field)?;
            let region = SpaceTimeRegion { lo, hi, t0, t1 };
            let (slope, without, csv) = commands::frac_exponent(&traj, q, &region, &steps)?;
            emit(&out, &csv)?;
            match without {
                Some(w) => eprintln!("slope {slope} (without finest h {w})"),
                None => eprintln!("slope {slope}"),
            }
        }
        Command::Validate { csv } => {
            let first = run_suite()?;
            let report = suite_csv(&first)?;
            let repeat = suite_csv(&run_suite()?)?;
            let mut results = first;
            results.push(determinism(&report, &repeat));
            for r in &results {
                println!("{}", r.line());
            }
            if let Some(path) = csv {
                fs::write(path, &report)?;
            }
            if results.iter().any(|r| !r.pass()) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
