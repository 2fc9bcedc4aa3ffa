//! The `wsaw` command line: config handling and one function per subcommand.
//!
//! Every subcommand writes its results into the output directory (CSV for
//! curves, JSON for scalars and verdicts) together with the effective
//! configuration, and prints a short summary. Exit codes: 0 success,
//! 1 numerical failure, 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::{GridPreset, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<wsaw_core::Error> for CliError {
    fn from(e: wsaw_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wsaw",
    version,
    about = "Escape speed, critical point and Green's functions of the 1D weakly self-avoiding walk"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults are used for anything not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the Monte Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces the configured quadrature grid.
    #[arg(long, global = true, value_enum)]
    pub grid_preset: Option<GridPreset>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep nu_c, theta and u_bar over g; writes speed.csv and speed.json.
    Speed {
        /// Comma-separated g values (default: the configured sweep).
        #[arg(long, value_delimiter = ',')]
        g: Vec<f64>,
    },
    /// Critical point at each g; writes critical_nu.json.
    CriticalNu {
        #[arg(long, value_delimiter = ',')]
        g: Vec<f64>,
    },
    /// Two-point profile G_0j for j = 0..=j_max; writes twopoint.csv and twopoint.json.
    Twopoint {
        #[arg(long)]
        g: f64,
        #[arg(long, allow_hyphen_values = true)]
        nu: f64,
        #[arg(long, default_value_t = 40)]
        j_max: usize,
        /// Accept nu below the critical point.
        #[arg(long)]
        allow_divergent: bool,
    },
    /// chi_+, G_00 and chi; writes susceptibility.json.
    Susceptibility {
        #[arg(long)]
        g: f64,
        #[arg(long, allow_hyphen_values = true)]
        nu: f64,
    },
    /// Moment sums and correlation lengths; writes moments.json.
    Moments {
        #[arg(long)]
        g: f64,
        #[arg(long, allow_hyphen_values = true)]
        nu: f64,
        #[arg(long, default_value_t = 2)]
        k_max: usize,
    },
    /// c_n sequences and theta' certificates; writes monotonicity_cn.csv and monotonicity.json.
    Monotonicity {
        #[arg(long, value_delimiter = ',')]
        g: Vec<f64>,
        /// Number of terms after c_0.
        #[arg(long, default_value_t = wsaw_core::monotonicity::DEFAULT_TERMS)]
        terms: usize,
        /// Also compare L[H_n] with finite differences at n = 5, 10, 20, 40.
        #[arg(long)]
        hn_check: bool,
    },
    /// Monte Carlo estimators.
    Simulate {
        #[command(subcommand)]
        mode: SimulateMode,
    },
    /// Prints the effective configuration as TOML.
    PrintConfig,
}

#[derive(Debug, Subcommand)]
pub enum SimulateMode {
    /// E[X(T)^k | X(T) > 0] at the configured durations; writes simulate_moments.json.
    Moments {
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Comma-separated durations (default: the configured list).
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
    },
    /// Finite-volume two-point function by the Laplace estimator; writes simulate_laplace.json.
    Laplace {
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        #[arg(long, default_value_t = 0.5)]
        nu: f64,
        /// Box half-width N.
        #[arg(long, default_value_t = 6)]
        n_box: usize,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        i: i64,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        j: i64,
        /// Truncation time (default: 20 / nu).
        #[arg(long)]
        t_max: Option<f64>,
    },
}

/// Applies the global flags to the configuration.
pub fn effective_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.mc.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.output.dir = out.clone();
    }
    if let Some(preset) = global.grid_preset {
        cfg.grid = preset.grid();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` and runs the subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match effective_config(&cli.global).and_then(|cfg| commands::dispatch(&cfg, &cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wsaw: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
