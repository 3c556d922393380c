use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poetry_dp::commands::{calibrate, compare_agg, converge, mia, run, CliError};
use poetry_dp::config::CONFIG_SCHEMA;

/// Differentially private in-context inference over ensembles of
/// per-example expert predictions.
#[derive(Debug, Parser)]
#[command(name = "poetry-dp", version, about)]
struct Cli {
    /// Print the JSON config schema and exit.
    #[arg(long, global = true)]
    print_schema: bool,
    /// Worker threads for the experiment sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the per-token noise scale for a privacy budget.
    Calibrate {
        /// Total privacy budget ε (> 0).
        #[arg(long)]
        epsilon: f64,
        /// Budget slack δ; required to be in (0, 1) for advanced composition.
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Token horizon T the budget must cover.
        #[arg(long, default_value_t = 1)]
        tokens: usize,
        /// Composition rule: naive | advanced.
        #[arg(long, default_value = "advanced")]
        mode: String,
    },
    /// Run a classify/generate/pbs sweep from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output base path; writes <out>.jsonl and <out>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure ensemble convergence on the planted simulator.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a membership-inference attack with and without noise.
    Mia {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare soft and hard aggregation fidelity on heavy-tailed experts.
    CompareAgg {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, turning `poetry-dp ... | head` into a
    // broken-pipe panic; restore the conventional silent exit.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{CONFIG_SCHEMA}");
        return ExitCode::SUCCESS;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        // A failure here means a pool already exists (only possible in
        // tests); the run is still correct, just not at the requested width.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (try --help)");
        return ExitCode::from(2);
    };
    let result = match command {
        Command::Calibrate { epsilon, delta, tokens, mode } => {
            calibrate::cmd_calibrate(epsilon, delta, tokens, &mode)
        }
        Command::Run { config, out } => run::cmd_run(&config, out.as_deref()),
        Command::Converge { config, out } => converge::cmd_converge(&config, out.as_deref()),
        Command::Mia { config, out } => mia::cmd_mia(&config, out.as_deref()),
        Command::CompareAgg { config, out } => {
            compare_agg::cmd_compare_agg(&config, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
