//! `msc`: readout-mediator diagnostics over activation caches.
//!
//! Exit codes: 0 on success, 2 on usage or validation errors, 3 on numerical
//! failures. `MSC_THREADS` bounds the worker pool.

mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "msc", version, about = "Readout-mediator subspace diagnostics")]
struct Cli {
    /// JSON file of subcommand parameters; command-line values take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic planted-mediator cache.
    SynthGen(SynthArgs),
    /// Fit the circular day-of-year probe.
    ProbeFit {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        params: ProbeParams,
    },
    /// Search for the mediator subspace by maximizing ablated NLL.
    DasFit {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        params: DasParams,
    },
    /// Full probe-versus-mediator diagnostic with random controls.
    Diagnose {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        params: DiagnoseParams,
    },
    /// Monte-Carlo Haar null of principal-angle statistics.
    CalibrateNull {
        #[command(flatten)]
        io: NullIo,
        #[command(flatten)]
        params: NullParams,
    },
    /// Scan attention heads for day-offset structure (CSV).
    QkScan {
        #[command(flatten)]
        io: QkIo,
        #[command(flatten)]
        params: QkParams,
    },
    /// Score queries by distance from the day manifold (CSV).
    Deviation {
        #[command(flatten)]
        io: DeviationIo,
        #[command(flatten)]
        params: DeviationParams,
    },
    /// Probe-monitoring stress tests.
    SafetyBattery {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        params: SafetyParams,
    },
    /// Split sequence positions into predictable and novel parts.
    TfaSplit {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        params: TfaParams,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MSC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("MSC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let config = cli.config.as_deref();
    match cli.command {
        Command::SynthGen(args) => synth_gen(args, config),
        Command::ProbeFit { io, params } => probe_fit(io, params, config),
        Command::DasFit { io, params } => das_fit(io, params, config),
        Command::Diagnose { io, params } => diagnose(io, params, config),
        Command::CalibrateNull { io, params } => calibrate_null(io, params, config),
        Command::QkScan { io, params } => qk_scan(io, params, config),
        Command::Deviation { io, params } => deviation(io, params, config),
        Command::SafetyBattery { io, params } => safety_battery(io, params, config),
        Command::TfaSplit { io, params } => tfa(io, params, config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
