//! Command-line front end for the sonar pose estimation library.
//!
//! Conventions: all angles in files and JSON output are radians (FOV flags
//! and odometry rotation errors are degrees where noted), distances are
//! meters. Exit codes: 0 ok, 2 input error, 3 estimator error, 4 sweep
//! exhaustion, 5 tracking lost.

mod commands;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, FovFile, MechanismName, OutputFormat};

#[derive(Parser)]
#[command(
    name = "bestanp",
    version,
    about = "Bias-eliminated closed-form 6-DoF pose estimation for 2D forward-looking sonar",
    long_about = "Pose estimation, simulation, Monte Carlo sweeps, odometry and CRLB \
queries for a 2D forward-looking sonar.\n\nUnits: distances in meters; angles in files \
and JSON are radians; FOV flags are half-widths in degrees; odometry rotation errors \
are reported in degrees."
)]
struct Cli {
    /// Random seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file path; results are also printed to stdout where sensible.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format for file outputs.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a pose from a correspondence JSON file.
    Estimate {
        /// Correspondence file: {"points": [[x,y,z],...], "measurements":
        /// [{"d": meters, "theta": radians},...], "truth": optional}.
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic correspondence file with a truth block.
    Simulate {
        /// Number of correspondences.
        #[arg(long, default_value_t = 14)]
        n: usize,
        /// Distance noise standard deviation, meters.
        #[arg(long, default_value_t = 1e-3)]
        sigma_d: f64,
        /// Azimuth noise standard deviation (on the tangent, dimensionless,
        /// or on the angle in radians depending on --mechanism).
        #[arg(long, default_value_t = 1e-3)]
        sigma_theta: f64,
        /// Where the azimuth noise enters.
        #[arg(long, value_enum, default_value_t = MechanismName::OnTangent)]
        mechanism: MechanismName,
        /// Maximum sonar range, meters.
        #[arg(long, default_value_t = 6.0)]
        max_distance: f64,
        /// Azimuth half-width, degrees.
        #[arg(long, default_value_t = 30.0)]
        azimuth_deg: f64,
        /// Elevation half-width, degrees.
        #[arg(long, default_value_t = 10.0)]
        elevation_deg: f64,
    },
    /// Run a Monte Carlo sweep described by a JSON config file.
    Sweep {
        /// Sweep config: {"sweep_kind": "Noise"|"PointCount"|"Fov"|
        /// "NoiseMechanism"|"GnIterations"|"Timing", "sweep_values": [...],
        /// "trials": 1000, "sigma_d": .., "sigma_theta": .., "base_n": ..,
        /// "seed": ..}.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the simulated odometry pipeline described by a JSON config file.
    Odometry {
        /// Odometry config: {"shape": "EightShaped"|"Circle", "scale": 2.0,
        /// "frames": 200, "sigma_d": .., "sigma_theta": .., "seed": ..}.
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the Cramer-Rao bound at the truth pose of a correspondence file.
    Crlb {
        /// Correspondence file; must contain a truth block.
        #[arg(long)]
        input: PathBuf,
        /// Distance noise standard deviation, meters.
        #[arg(long)]
        sigma_d: f64,
        /// Azimuth-tangent noise standard deviation.
        #[arg(long)]
        sigma_theta: f64,
    },
    /// Measure mean estimation time at the given point counts.
    Timing {
        /// Comma-separated point counts, e.g. 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        n_values: Vec<usize>,
        /// Repetitions per point count.
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Estimate { input } => commands::cmd_estimate(&input, out, cli.format),
        Command::Simulate {
            n,
            sigma_d,
            sigma_theta,
            mechanism,
            max_distance,
            azimuth_deg,
            elevation_deg,
        } => commands::cmd_simulate(
            n,
            sigma_d,
            sigma_theta,
            mechanism,
            &FovFile {
                max_distance,
                azimuth_halfwidth_deg: azimuth_deg,
                elevation_halfwidth_deg: elevation_deg,
            },
            cli.seed.unwrap_or(0),
            out,
        ),
        Command::Sweep { config } => commands::cmd_sweep(&config, cli.seed, out, cli.format),
        Command::Odometry { config } => commands::cmd_odometry(&config, cli.seed, out),
        Command::Crlb {
            input,
            sigma_d,
            sigma_theta,
        } => commands::cmd_crlb(&input, sigma_d, sigma_theta, out),
        Command::Timing {
            n_values,
            repetitions,
        } => commands::cmd_timing(&n_values, repetitions, out, cli.format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
