//! File formats, experiment runner and CLI for the speaker-verification
//! adversarial testbed built on [`asv_vote_core`].
//!
//! Output layout under the configured `out_dir`:
//!
//! ```text
//! corpus/           WAVs, manifest.csv, trials.csv      (gen-corpus)
//! model.ckpt        binary checkpoint                   (train)
//! train_log.csv     epoch,loss,learning_rate,dev_eer    (train)
//! report.csv        attack × defense FAR/FRR grid        (evaluate)
//! scores.csv        undefended score of every trial      (evaluate)
//! sweep_votes.csv   FAR/FRR against K                    (sweep-votes)
//! sweep_iters.csv   perfect-knowledge FAR/FRR against N  (sweep-iters)
//! ```

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
mod error;
pub mod runner;
pub mod wav;

pub use commands::{cmd_evaluate, cmd_gen_corpus, cmd_sweep_iters, cmd_sweep_votes, cmd_train, RunOptions};
pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, Result};
