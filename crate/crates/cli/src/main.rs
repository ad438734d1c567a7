use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use due_cli::{run_diagnostics, run_solve, run_validate, Mode, Overrides, INPUT_ERROR};

/// Dynamic user equilibrium solver and state-operator diagnostics.
///
/// Log verbosity follows the DUE_LOG environment variable (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "due", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the scenario's output_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of time bins (overrides horizon.n_bins).
    #[arg(long, global = true, value_name = "N")]
    bins: Option<usize>,
    /// Gap tolerance for solve, Picard tolerance for diagnose.
    #[arg(long, global = true, value_name = "X")]
    tol: Option<f64>,
    /// Iteration cap for the solver or the Picard iteration.
    #[arg(long = "max-iter", global = true, value_name = "K")]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for an equilibrium; exit 0 when converged, 2 when not.
    Solve { network: PathBuf, scenario: PathBuf },
    /// Run a state-operator diagnostic from the scenario's diagnostics section.
    Diagnose {
        #[arg(value_enum)]
        mode: ModeArg,
        scenario: PathBuf,
    },
    /// Check a network file.
    Validate {
        network: PathBuf,
        /// Write the network back out in canonical form.
        #[arg(long, value_name = "FILE")]
        export: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Picard,
    Sensitivity,
    Continuity,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Picard => Mode::Picard,
            ModeArg::Sensitivity => Mode::Sensitivity,
            ModeArg::Continuity => Mode::Continuity,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DUE_LOG", "warn")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        out: cli.out,
        bins: cli.bins,
        tol: cli.tol,
        max_iter: cli.max_iter,
    };
    let result = match cli.command {
        Command::Solve { network, scenario } => {
            run_solve(&network, &scenario, &overrides).map(|s| {
                if s.code() != 0 {
                    eprintln!("not converged: iteration cap reached");
                }
                s.code()
            })
        }
        Command::Diagnose { mode, scenario } => {
            run_diagnostics(mode.into(), &scenario, &overrides).map(|s| s.code())
        }
        Command::Validate { network, export } => {
            run_validate(&network, export.as_deref()).map(|msg| {
                println!("{msg}");
                0
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(INPUT_ERROR)
        }
    }
}
