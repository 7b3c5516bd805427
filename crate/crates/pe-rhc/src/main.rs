use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pe_rhc::cli::{
    cmd_check, cmd_run, load_experiment, resolve_workers, CliError, Experiment, FlagOverrides,
    EXIT_RUNTIME,
};

/// Simulation and learning harness for receding-horizon control of
/// unknown constrained linear systems.
#[derive(Parser)]
#[command(name = "pe-rhc", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment batch: one CSV per (T, seed) plus summary.json.
    Run(CommonArgs),
    /// Run the invariant check suite and print one pass/fail line per check.
    Check(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed override (replaces the config's seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Controller override: online-rhc | etc | oracle | hindsight.
    #[arg(long)]
    controller: Option<String>,
    /// Worker pool size (falls back to PE_RHC_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn load(args: &CommonArgs) -> Result<Experiment, CliError> {
    let flags = FlagOverrides {
        out: args.out.clone(),
        seed: args.seed,
        controller: args.controller.clone(),
    };
    load_experiment(&args.config, &flags)
}

fn execute(args: &CommonArgs, run: bool) -> Result<(), CliError> {
    let exp = load(args)?;
    let body = move || if run { cmd_run(&exp) } else { cmd_check(&exp) };
    match resolve_workers(args.workers) {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let (common, run) = match &args.command {
        Command::Run(c) => (c, true),
        Command::Check(c) => (c, false),
    };
    match execute(common, run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_RUNTIME as u8))
        }
    }
}
