use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use etdac::analysis::VerifyOptions;
use etdac_cli::{cmd_export_plots, cmd_run, cmd_stats, cmd_verify, RunArgs, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "etdac", version, about = "Event-triggered dynamic average consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write a trace directory.
    Run {
        /// Scenario file, or a bundled name (paper_sec4, two_agent_oracle, quiescent, single_agent).
        #[arg(long)]
        scenario: String,
        /// Output directory for the trace.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the row decimation of the continuous series.
        #[arg(long)]
        record_every: Option<u64>,
    },
    /// Print inter-event statistics of a trace.
    Stats {
        /// Trace directory written by `run`.
        trace: PathBuf,
    },
    /// Run every analysis check on a trace; exits 3 unless all pass.
    Verify {
        /// Trace directory written by `run`.
        trace: PathBuf,
        /// Bound on max |x̃| inside convergence windows.
        #[arg(long, default_value_t = 0.1)]
        bound: f64,
        /// Settling time before a convergence window, in seconds.
        #[arg(long, default_value_t = 5.0)]
        settle: f64,
        /// Length of each convergence window, in seconds.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
    },
    /// Write per-figure CSV files from a trace.
    ExportPlots {
        /// Trace directory written by `run`.
        trace: PathBuf,
        /// Directory for the figure CSVs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return ExitCode::from(code as u8);
        }
    };
    let mut stdout = io::stdout().lock();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            record_every,
        } => cmd_run(
            &RunArgs {
                scenario,
                out,
                seed,
                record_every,
            },
            &mut stdout,
        ),
        Command::Stats { trace } => cmd_stats(&trace, &mut stdout),
        Command::Verify {
            trace,
            bound,
            settle,
            window,
        } => cmd_verify(
            &trace,
            &VerifyOptions {
                convergence_bound: bound,
                settle,
                window,
            },
            &mut stdout,
        ),
        Command::ExportPlots { trace, out } => cmd_export_plots(&trace, &out, &mut stdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
