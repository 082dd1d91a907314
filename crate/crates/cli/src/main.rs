use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use radar_est::{Error, ErrorClass};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "radar-est",
    version,
    about = "Target localization bounds and estimators for distributed MIMO radar"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Load a config and echo the resolved dimensions
    Validate,
    /// Cramer-Rao bound on the target parameters
    Crlb,
    /// Deterministic bound averaged over reflectivity draws
    Emcb,
    /// Synthesize one snapshot set and run the estimator on it
    Estimate,
    /// Monte-Carlo MSE against the bound over an SNR grid
    Sweep,
    /// MSE and noise-power bias as the receive side grows
    Asymptote,
    /// Cross-correlation of the transmit waveforms at the configured targets
    OrthoCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Stochastic,
    Deterministic,
}

impl From<ModelArg> for radar_est::Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Stochastic => radar_est::Model::Stochastic,
            ModelArg::Deterministic => radar_est::Model::Deterministic,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format (sweeps default to csv, everything else to json)
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Master seed for all randomness
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// SNR values in dB, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, global = true)]
    pub snr_db: Option<Vec<f64>>,
    /// Monte-Carlo trials (sweeps) or reflectivity draws (emcb)
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Signal model (default: the config's)
    #[arg(long, value_enum, global = true)]
    pub model: Option<ModelArg>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Numerical => 2,
        ErrorClass::Config => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DegenerateGeometry(_) => "degenerate_geometry",
        Error::InvalidScenario(_) => "invalid_scenario",
        Error::Numerical { .. } => "numerical",
        Error::NotPsd(_) => "not_psd",
        Error::SizeGuard(_) => "size_guard",
        Error::Config(_) => "config",
        Error::Json(_) => "json",
        Error::Io(_) => "io",
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fail(code: u8, kind: &str, msg: &str) -> ExitCode {
    eprintln!("error code={code} kind={kind} message={:?}", one_line(msg));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            return fail(1, "usage", first);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RADAR_EST_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let verb = match cli.verb {
        Verb::Validate => "validate",
        Verb::Crlb => "crlb",
        Verb::Emcb => "emcb",
        Verb::Estimate => "estimate",
        Verb::Sweep => "sweep",
        Verb::Asymptote => "asymptote",
        Verb::OrthoCheck => "ortho-check",
    };
    let args = &cli.common;
    let Some(config) = &args.config else {
        return fail(1, "usage", "--config is required");
    };
    if let Some(t) = args.threads {
        if t == 0 {
            return fail(1, "usage", "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return fail(1, "usage", &e.to_string());
        }
    }
    let text = match commands::run(verb, config, args) {
        Ok(t) => t,
        Err(e) => return fail(exit_code(&e), kind(&e), &e.to_string()),
    };
    let written = match &args.out {
        Some(p) => std::fs::write(p, text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(3, "io", &e.to_string()),
    }
}
