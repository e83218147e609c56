use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use causalplan::harness::{
    evaluate, run_collect, run_matrix, run_oracle, run_train, CollectJob, ExperimentConfig, MatrixJob, OracleJob,
    TrainJob,
};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "causalplan", version, about = "Causal structure learning and causally reweighted planning")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out a behavior policy and write a trajectory buffer.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the gated model on a buffer and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the causal action matrix from a checkpoint.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run planning episodes and report rewards and invalid actions.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Repeat to evaluate several seeds.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Synthetic structure recovery against a ridge baseline.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Collect { config, seed, out } => {
            let mut job: CollectJob = load(&config)?;
            if let Some(s) = seed {
                job.collect.seed = s;
            }
            if let Some(o) = out {
                job.out = o;
            }
            let buffer = run_collect(&job)?;
            println!("wrote {} records to {}", buffer.len(), job.out.display());
        }
        Cmd::Train { config, seed, out } => {
            let mut job: TrainJob = load(&config)?;
            if let Some(s) = seed {
                job.train.seed = s;
            }
            if let Some(o) = out {
                job.out = o;
            }
            let ck = run_train(&job)?;
            let last = ck.loss_trace.last().map_or(f64::NAN, |p| p.causal);
            println!("final causal loss {last:.6}; checkpoint {}", job.out.display());
        }
        Cmd::Matrix { config, out } => {
            let mut job: MatrixJob = load(&config)?;
            if let Some(o) = out {
                job.out = o;
            }
            let m = run_matrix(&job)?;
            let (rows, cols) = (m.action_dim(), m.parent_dim());
            println!("wrote {rows}x{cols} matrix to {}", job.out.display());
        }
        Cmd::Eval {
            config,
            seed,
            gamma,
            out,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let summary = evaluate(&cfg)?;
            print!("{}", summary.table());
        }
        Cmd::Oracle { config, seed, out } => {
            let mut job: OracleJob = match config {
                Some(p) => load(&p)?,
                None => OracleJob::default(),
            };
            if !seed.is_empty() {
                job.seeds = seed;
            }
            if out.is_some() {
                job.out = out;
            }
            let report = run_oracle(&job)?;
            println!("{:>6} {:>8} {:>8} {:>10}", "seed", "gate_f1", "ridge_f1", "agreement");
            for r in &report.results {
                println!("{:>6} {:>8.3} {:>8.3} {:>10.3}", r.seed, r.gates.f1, r.ridge.f1, r.agreement);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
