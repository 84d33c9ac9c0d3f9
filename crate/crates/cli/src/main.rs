//! `mss`: command-line front end for the multiscale scan engine.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mss", version, about = "Multiscale scan statistics for pattern detection in noisy tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Base seed for all random streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Engine configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for reports and generated files; reports go to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "MSS_JOBS", default_value_t = 0)]
    pub jobs: usize,
    /// Omit timestamps so identical runs produce identical bytes.
    #[arg(long)]
    pub deterministic: bool,
}

/// Net selection: an explicit spec file, or the ε rule on the tensor geometry.
#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Net spec (JSON); overrides the flags below.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Target covering radius.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Smoothness exponent for α sizing (defaults to the dictionary's).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Location spacing factor, overriding the ε rule.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scale ratio, overriding the ε rule.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct DictArgs {
    /// Dictionary file (JSON); the built-in families are used when absent.
    #[arg(long)]
    pub dict: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ThresholdArgs {
    /// Previously computed threshold (JSON from `calibrate`).
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    /// Type-1 level.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Use the closed-form threshold with this constant instead of simulation.
    #[arg(long = "K")]
    pub k: Option<f64>,
    /// Null replicates for a simulated threshold.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an H0/H1 dataset from a simulation config.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        /// Simulation config (JSON).
        #[arg(long)]
        sim: PathBuf,
        /// Replicate index to generate.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Build a net and report its size.
    Net {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long = "L")]
        half_width: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
        /// Include every entry in the report.
        #[arg(long)]
        list: bool,
    },
    /// Scan one tensor against a dictionary.
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        /// Tensor file.
        #[arg(long)]
        tensor: PathBuf,
    },
    /// Test a dataset for the presence of a dictionary pattern.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Detect, then report the best pattern and per-tensor estimates.
    Learn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Simulate null thresholds or calibrate constants.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        /// What to calibrate.
        #[arg(long, value_enum, default_value_t = commands::CalibrateMode::Threshold)]
        mode: commands::CalibrateMode,
        #[arg(long = "L")]
        half_width: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "R")]
        resolution: Option<u32>,
        /// Tensors per dataset.
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Cache file for the calibrated K.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Check that a net covers the parameter space at a given radius.
    VerifyNet {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long = "L")]
        half_width: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Pattern to check (all dictionary patterns when absent).
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Tail diagnostics of Gaussian maxima and of the null scan maximum.
    DiagnoseTails {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_enum, default_value_t = commands::TailMode::Maxgauss)]
        mode: commands::TailMode,
        /// Number of Gaussians per maximum.
        #[arg(long = "N", default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Exceedance thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 3.0])]
        u: Vec<f64>,
        #[arg(long = "L", default_value_t = 256.0)]
        half_width: f64,
        #[arg(long)]
        pattern: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
