use std::path::PathBuf;
use std::process::ExitCode;

use asv_vote::{ExperimentConfig, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "asv-vote", version, about = "Adversarial attacks and voting defense for a toy speaker verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file, or `paper-preset` for the built-in paper grid.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Leave wall_time columns empty.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the corpus, manifest and trial list.
    GenCorpus,
    /// Train the speaker embedder and write a checkpoint.
    Train,
    /// FAR/FRR for every attack × defense setting.
    Evaluate,
    /// FAR/FRR against the number of votes.
    SweepVotes,
    /// Perfect-knowledge FAR/FRR against attack iterations.
    SweepIters,
}

fn run(cli: Cli) -> asv_vote::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    let options = RunOptions {
        no_timing: cli.no_timing,
    };
    match cli.command {
        Command::GenCorpus => {
            let out = asv_vote::cmd_gen_corpus(&config)?;
            println!("wrote {} utterances to {}", out.n_utterances, out.dir.display());
            println!("manifest sha256 {}", out.manifest_hash);
        }
        Command::Train => {
            let out = asv_vote::cmd_train(&config)?;
            if let Some(last) = out.log.last() {
                println!("epoch {} loss {:.4} dev eer {:.4}", last.epoch, last.loss, last.dev_eer);
            }
            println!("wrote {}", out.checkpoint.display());
        }
        Command::Evaluate => {
            let out = asv_vote::cmd_evaluate(&config, options)?;
            println!("tau {:.6}, {} rows", out.tau, out.rows.len());
            println!("wrote {}", out.report.display());
        }
        Command::SweepVotes => {
            let out = asv_vote::cmd_sweep_votes(&config, options)?;
            println!("wrote {}", out.path.display());
        }
        Command::SweepIters => {
            let out = asv_vote::cmd_sweep_iters(&config, options)?;
            println!("wrote {}", out.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
