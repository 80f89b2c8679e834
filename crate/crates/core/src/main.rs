use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ouheat::cli_io::{run_pipeline, Command, RunConfig};

#[derive(Parser)]
#[command(name = "ouheat", version, about = "Fit an OU temperature model from daily maxima and compute heat-wave risk")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit the parameters on the train seasons and write the QQ table.
    Estimate,
    /// Heat-wave probability, mean duration and severity.
    Risk,
    /// Prediction intervals for the first test days.
    Predict,
    /// Replication study on simulated samples.
    Study,
    /// Sample paths for a sweep over each parameter.
    Trajectories,
    /// Estimate, risk and predict in one pass.
    Run,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Estimate => Command::Estimate,
            Cmd::Risk => Command::Risk,
            Cmd::Predict => Command::Predict,
            Cmd::Study => Command::Study,
            Cmd::Trajectories => Command::Trajectories,
            Cmd::Run => Command::Run,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if cfg.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
            eprintln!("error: cannot configure {} workers: {e}", cfg.workers);
            return ExitCode::from(2);
        }
    }

    match run_pipeline(cli.command.into(), &cfg) {
        Ok(out) => {
            for name in out.outputs.names() {
                println!("{}", cfg.out_dir.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
