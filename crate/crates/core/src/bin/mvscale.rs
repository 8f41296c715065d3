use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvscale::experiment::{self, ExperimentConfig, ExperimentKind, RunOptions};
use mvscale::Error;

#[derive(Parser, Debug)]
#[command(name = "mvscale", version, about = "Two-time-scale mean-field particle experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's top-level seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "MVSCALE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the coupled particle system and record the slow trajectory.
    Simulate(RunArgs),
    /// Run bi-level consensus-based optimisation.
    CboOptimize(RunArgs),
    /// Fit the averaging-error rate over a grid of epsilon.
    AveragingRate(RunArgs),
    /// Solve the frozen invariant measure and its ergodicity rate.
    FrozenInvariant(RunArgs),
    /// Evaluate the rate functional on a path.
    LdpRate(RunArgs),
    /// Simulate under a control and record the occupation measure.
    ControlledRun(RunArgs),
    /// Probe a model's structural assumptions on random samples.
    Probe(RunArgs),
    /// Re-run a recorded experiment and compare its artifacts byte for byte.
    Replay {
        /// `summary.json` written by an earlier run.
        summary: PathBuf,
        #[arg(long, env = "MVSCALE_THREADS")]
        threads: Option<usize>,
    },
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes '{}' but '{}' was requested",
            cfg.experiment, kind
        )));
    }
    let opts = RunOptions {
        out_dir: args.out,
        seed_override: args.seed_override,
    };
    let (summary, dir) = experiment::with_threads(args.threads, || experiment::run(cfg, &opts))??;
    println!("{}", serde_json::to_string_pretty(&summary.headline)?);
    eprintln!("wrote {} in {:.2}s", dir.display(), summary.wall_time_s);
    Ok(())
}

fn replay(summary: PathBuf, threads: Option<usize>) -> Result<(), Error> {
    let report = experiment::with_threads(threads, || experiment::replay(&summary))??;
    for f in &report.files {
        match &f.detail {
            None => println!("ok   {}", f.name),
            Some(d) => println!("FAIL {}: {d}", f.name),
        }
    }
    report.into_result().map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run(ExperimentKind::Simulate, a),
        Command::CboOptimize(a) => run(ExperimentKind::CboOptimize, a),
        Command::AveragingRate(a) => run(ExperimentKind::AveragingRate, a),
        Command::FrozenInvariant(a) => run(ExperimentKind::FrozenInvariant, a),
        Command::LdpRate(a) => run(ExperimentKind::LdpRate, a),
        Command::ControlledRun(a) => run(ExperimentKind::ControlledRun, a),
        Command::Probe(a) => run(ExperimentKind::Probe, a),
        Command::Replay { summary, threads } => replay(summary, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
