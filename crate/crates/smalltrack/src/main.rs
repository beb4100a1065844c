use clap::{Parser, Subcommand};
use smalltrack::cli::{
    cmd_attrs, cmd_eval, cmd_report, cmd_simulate, cmd_stats, cmd_sweep, cmd_track, cmd_train,
    CliError, PipelineConfig, TrainOptions,
};
use smalltrack::matcher::BranchMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "smalltrack",
    about = "Benchmark toolkit and candidate-association tracker for small, fast-moving targets",
    version
)]
struct Args {
    /// Base seed fanned out to every random decision.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-sequence / per-omega work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Optional pipeline-config JSON overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics and per-category sequence lengths.
    Stats {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sequence attributes and their co-occurrence matrix.
    Attrs {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset from a simulation config file.
    Simulate {
        /// JSON file holding {"template": {...}, "count": N}.
        #[arg(long)]
        sim_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the candidate matcher on a simulated dataset.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        omega: f64,
        /// Use only the deep-appearance branch.
        #[arg(long, default_value_t = false)]
        high_only: bool,
    },
    /// Run the tracker over a simulated dataset with a trained checkpoint.
    Track {
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-pass evaluation of one or more result directories.
    Eval {
        dataset: PathBuf,
        /// Result directory per tracker; the directory name names the tracker.
        #[arg(long = "results", required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train + track + eval across an omega grid.
    Sweep {
        dataset: PathBuf,
        /// Comma-separated omega grid.
        #[arg(long, value_delimiter = ',', default_values_t = sweep_default())]
        omegas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render precision/success plots from an eval.json.
    Report {
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sweep_default() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn run(args: Args) -> Result<(), CliError> {
    let pipeline = PipelineConfig::load(args.config.as_deref())?;
    match args.command {
        Command::Stats { dataset, out } => cmd_stats(&dataset, &out, args.seed),
        Command::Attrs { dataset, out } => cmd_attrs(&dataset, &out, args.seed),
        Command::Simulate { sim_config, out } => cmd_simulate(&sim_config, &out, args.seed),
        Command::Train {
            dataset,
            out,
            omega,
            high_only,
        } => cmd_train(
            &dataset,
            &out,
            &TrainOptions {
                omega,
                mode: if high_only {
                    BranchMode::HighOnly
                } else {
                    BranchMode::Dual
                },
                seed: args.seed,
            },
            &pipeline,
        ),
        Command::Track {
            dataset,
            checkpoint,
            out,
        } => cmd_track(&dataset, &checkpoint, &out, args.seed, args.jobs, &pipeline),
        Command::Eval {
            dataset,
            results,
            out,
        } => cmd_eval(&dataset, &results, &out, args.seed),
        Command::Sweep {
            dataset,
            omegas,
            out,
        } => cmd_sweep(&dataset, &omegas, &out, args.seed, args.jobs, &pipeline),
        Command::Report { eval, out } => cmd_report(&eval, &out, args.seed),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
