//! The five subcommands. Each is a function of the config and the files it
//! reads; output rows come out in grid order whatever the thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use asv_vote_core::attack::AdversarialResult;
use asv_vote_core::corpus::{build_trials, generate_corpus};
use asv_vote_core::metrics::{calibrate_threshold, split_trials, Trial};
use asv_vote_core::model::{cosine_similarity, AsvModel};
use asv_vote_core::seed::derive_seed;
use asv_vote_core::train::{train, Example};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{ExperimentConfig, KnowledgeLevel};
use crate::corpus_io::{self, write_csv, LoadedCorpus};
use crate::error::{core_err, io_err, CliError, Result};
use crate::runner::{split_by_label, Attack, Defense, Evaluator};
use crate::wav;

pub const CORPUS_DIR: &str = "corpus";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const SWEEP_VOTES_FILE: &str = "sweep_votes.csv";
pub const SWEEP_ITERS_FILE: &str = "sweep_iters.csv";
pub const ADVERSARIAL_DIR: &str = "adversarial";

/// Options that change how a command runs but not what it computes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Leave the wall_time column empty so reruns compare byte for byte.
    pub no_timing: bool,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Invalid {
            stage: "thread pool",
            msg: e.to_string(),
        })
}

fn ensure_dir(stage: &'static str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(stage, dir))
}

fn elapsed(start: Instant, options: RunOptions) -> Option<f64> {
    (!options.no_timing).then(|| start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenCorpusOutput {
    pub dir: PathBuf,
    pub manifest_hash: String,
    pub n_utterances: usize,
}

pub fn cmd_gen_corpus(config: &ExperimentConfig) -> Result<GenCorpusOutput> {
    let stage = "gen-corpus";
    config.validate()?;
    let dir = config.out_dir.join(CORPUS_DIR);
    ensure_dir(stage, &dir)?;
    let corpus = generate_corpus(&config.corpus_config(), config.seed).map_err(core_err(stage))?;
    let c = &config.corpus;
    let trials = build_trials(
        &corpus.utterances,
        c.n_target_trials,
        c.n_nontarget_trials,
        derive_seed(config.seed, 0, "trials"),
    )
    .map_err(core_err(stage))?;
    let total = trials.len();
    let set = split_trials(trials, c.dev_trials as f64 / total as f64, derive_seed(config.seed, 0, "split"))
        .map_err(core_err(stage))?;
    let manifest_hash = corpus_io::write_corpus(&dir, &corpus, &set)?;
    Ok(GenCorpusOutput {
        dir,
        manifest_hash,
        n_utterances: corpus.utterances.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub dev_eer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: Vec<TrainLogRow>,
    pub model: AsvModel,
}

fn dev_eer(model: &AsvModel, corpus: &LoadedCorpus) -> std::result::Result<f64, asv_vote_core::Error> {
    let dev: Vec<Trial> = corpus.trials.dev().copied().collect();
    let mut needed: Vec<usize> = dev.iter().flat_map(|t| [t.enroll, t.test]).collect();
    needed.sort_unstable();
    needed.dedup();
    let embedded = needed
        .par_iter()
        .map(|&i| model.embed(&corpus.waveforms[i]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let emb = |i: usize| &embedded[needed.binary_search(&i).expect("embedded")];
    let scores: Vec<f64> = dev.iter().map(|t| cosine_similarity(emb(t.enroll), emb(t.test))).collect();
    let (t, n) = split_by_label(&dev, &scores);
    Ok(calibrate_threshold(&t, &n)?.eer())
}

/// Train on every corpus utterance with speaker labels; log loss and dev
/// EER per epoch.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutput> {
    let stage = "train";
    config.validate()?;
    let corpus = corpus_io::read_corpus(&config.out_dir.join(CORPUS_DIR))?;
    let model_config = config.model_config()?;
    if model_config.features.sample_rate != corpus.sample_rate {
        return Err(CliError::Invalid {
            stage,
            msg: format!(
                "model expects {} Hz audio, corpus is {} Hz",
                model_config.features.sample_rate, corpus.sample_rate
            ),
        });
    }
    let train_config = config.train_config()?;
    let examples: Vec<Example> = corpus
        .waveforms
        .iter()
        .zip(&corpus.labels)
        .map(|(w, &label)| Example { waveform: w, label })
        .collect();
    let pool = thread_pool(config.threads)?;
    let mut log = Vec::with_capacity(train_config.epochs);
    let mut eer_error = None;
    let outcome = train(model_config, &examples, &train_config, |stats, model| {
        match pool.install(|| dev_eer(model, &corpus)) {
            Ok(eer) => log.push(TrainLogRow {
                epoch: stats.epoch,
                loss: stats.loss,
                learning_rate: stats.learning_rate,
                dev_eer: eer,
            }),
            Err(e) => {
                eer_error.get_or_insert(e);
            }
        }
    })
    .map_err(core_err(stage))?;
    if let Some(e) = eer_error {
        return Err(CliError::Core {
            stage: "train dev eer",
            source: e,
        });
    }
    ensure_dir(stage, &config.out_dir)?;
    let checkpoint = config.out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.model, &checkpoint)?;
    write_csv(&config.out_dir.join(TRAIN_LOG_FILE), &log, stage)?;
    Ok(TrainOutput {
        checkpoint,
        log,
        model: outcome.model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub attack_kind: String,
    pub epsilon: Option<f64>,
    pub n_iters: Option<usize>,
    pub defense_kind: String,
    pub sigma: Option<f64>,
    pub k_votes: Option<usize>,
    pub far: f64,
    pub frr: f64,
    pub n_trials: usize,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub trial_id: usize,
    pub enroll_id: String,
    pub test_id: String,
    pub is_target: bool,
    pub partition: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialManifestRow {
    pub trial_id: usize,
    pub path: String,
    pub epsilon: f64,
    pub n_iters: usize,
    pub attack_kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutput {
    pub report: PathBuf,
    pub rows: Vec<ReportRow>,
    pub tau: f64,
}

fn load_inputs(config: &ExperimentConfig) -> Result<(AsvModel, LoadedCorpus)> {
    let corpus = corpus_io::read_corpus(&config.out_dir.join(CORPUS_DIR))?;
    let model = checkpoint::load(&config.out_dir.join(CHECKPOINT_FILE))?;
    Ok((model, corpus))
}

/// Attack settings in report order: no attack first, then knowledge-major,
/// then ε, then N.
pub fn attack_grid(config: &ExperimentConfig) -> Result<Vec<Attack>> {
    let mut grid = vec![Attack::None];
    for knowledge in config.knowledge_levels()? {
        for &epsilon in &config.attack.epsilons {
            for &n_iters in &config.attack.n_iters {
                grid.push(Attack::Bim {
                    knowledge,
                    epsilon,
                    n_iters,
                });
            }
        }
    }
    Ok(grid)
}

/// Defense settings in report order: none, votes (σ-major, then K), filters.
pub fn defense_grid(config: &ExperimentConfig) -> Result<Vec<Defense>> {
    let mut grid = vec![Defense::None];
    for &sigma in &config.defense.sigmas {
        for &k_votes in &config.defense.k_votes {
            grid.push(Defense::Vote { sigma, k_votes });
        }
    }
    grid.extend(config.filter_specs()?.into_iter().map(Defense::Filter));
    Ok(grid)
}

fn export_adversarial(
    out_dir: &Path,
    evaluator: &Evaluator<'_>,
    attack: &Attack,
    defense: &Defense,
    results: &[AdversarialResult],
    sample_rate: u32,
    manifest: &mut Vec<AdversarialManifestRow>,
) -> Result<()> {
    let Attack::Bim {
        knowledge,
        epsilon,
        n_iters,
    } = *attack
    else {
        return Ok(());
    };
    let variant = knowledge.against(defense).name();
    let mut sub = format!("{variant}_eps{epsilon}_n{n_iters}");
    if attack.adapts_to_defense() {
        sub.push('_');
        sub.push_str(defense.kind_name());
        if let Defense::Vote { sigma, k_votes } = defense {
            sub.push_str(&format!("_s{sigma}_k{k_votes}"));
        }
    }
    let dir = out_dir.join(ADVERSARIAL_DIR).join(&sub);
    ensure_dir("export adversarial", &dir)?;
    for (trial, result) in evaluator.eval_trials().iter().zip(results) {
        let rel = format!("{sub}/trial{:05}.wav", trial.trial_id);
        wav::write_wav(&out_dir.join(ADVERSARIAL_DIR).join(&rel), &result.x_adv, sample_rate)?;
        manifest.push(AdversarialManifestRow {
            trial_id: trial.trial_id,
            path: rel,
            epsilon,
            n_iters,
            attack_kind: variant.to_string(),
        });
    }
    Ok(())
}

/// One report row per (attack × defense), no-attack and no-defense
/// included. Also dumps undefended scores for every trial.
pub fn cmd_evaluate(config: &ExperimentConfig, options: RunOptions) -> Result<EvaluateOutput> {
    let stage = "evaluate";
    config.validate()?;
    config.validate_for(stage)?;
    let attacks = attack_grid(config)?;
    let defenses = defense_grid(config)?;
    let (model, corpus) = load_inputs(config)?;
    let pool = thread_pool(config.threads)?;
    let mut adv_manifest = Vec::new();
    let (rows, tau) = pool.install(|| -> Result<_> {
        let evaluator = Evaluator::new(&model, &corpus, config.seed)?;
        let scores: Vec<ScoreRow> = evaluator
            .raw_scores()?
            .into_iter()
            .map(|(t, p, score)| ScoreRow {
                trial_id: t.trial_id,
                enroll_id: corpus.utterance_id(t.enroll).to_string(),
                test_id: corpus.utterance_id(t.test).to_string(),
                is_target: t.is_target,
                partition: p.name().to_string(),
                score,
            })
            .collect();
        ensure_dir(stage, &config.out_dir)?;
        write_csv(&config.out_dir.join(SCORES_FILE), &scores, stage)?;
        let mut rows = Vec::with_capacity(attacks.len() * defenses.len());
        for attack in &attacks {
            // Limited-knowledge perturbations do not depend on the defense,
            // so they are generated once; the first row's wall time
            // includes the generation.
            let mut shared: Option<Option<Vec<AdversarialResult>>> = None;
            for defense in &defenses {
                let start = Instant::now();
                let fresh;
                let adversarial = if attack.adapts_to_defense() {
                    fresh = evaluator.attack(attack, defense)?;
                    fresh.as_deref()
                } else {
                    if shared.is_none() {
                        shared = Some(evaluator.attack(attack, defense)?);
                    }
                    shared.as_ref().and_then(|r| r.as_deref())
                };
                let first_use = attack.adapts_to_defense() || matches!(defense, Defense::None);
                if let (true, true, Some(results)) = (config.attack.export_wav, first_use, adversarial) {
                    export_adversarial(&config.out_dir, &evaluator, attack, defense, results, corpus.sample_rate, &mut adv_manifest)?;
                }
                let scores = evaluator.eval_scores(adversarial, defense)?;
                let rates = evaluator.rates(&scores)?;
                let (epsilon, n_iters) = match attack {
                    Attack::None => (None, None),
                    Attack::Bim { epsilon, n_iters, .. } => (Some(*epsilon), Some(*n_iters)),
                };
                rows.push(ReportRow {
                    attack_kind: attack.kind_name().to_string(),
                    epsilon,
                    n_iters,
                    defense_kind: defense.kind_name().to_string(),
                    sigma: defense.sigma(),
                    k_votes: defense.k_votes(),
                    far: rates.far,
                    frr: rates.frr,
                    n_trials: scores.len(),
                    wall_time: elapsed(start, options),
                });
            }
        }
        Ok((rows, evaluator.threshold().tau))
    })?;
    let report = config.out_dir.join(REPORT_FILE);
    write_csv(&report, &rows, stage)?;
    if config.attack.export_wav {
        write_csv(&config.out_dir.join(ADVERSARIAL_DIR).join("manifest.csv"), &adv_manifest, stage)?;
    }
    Ok(EvaluateOutput { report, rows, tau })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepVotesRow {
    pub k_votes: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub n_iters: usize,
    pub genuine_far: f64,
    pub genuine_frr: f64,
    pub adversarial_far: f64,
    pub adversarial_frr: f64,
    pub n_trials: usize,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepVotesOutput {
    pub path: PathBuf,
    pub rows: Vec<SweepVotesRow>,
}

/// FAR/FRR against a limited-knowledge attack as the number of votes grows.
pub fn cmd_sweep_votes(config: &ExperimentConfig, options: RunOptions) -> Result<SweepVotesOutput> {
    let stage = "sweep-votes";
    config.validate()?;
    config.validate_for(stage)?;
    let s = &config.sweep_votes;
    let mut ks = s.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let (model, corpus) = load_inputs(config)?;
    let pool = thread_pool(config.threads)?;
    let rows = pool.install(|| -> Result<_> {
        let evaluator = Evaluator::new(&model, &corpus, config.seed)?;
        let attack = Attack::Bim {
            knowledge: KnowledgeLevel::Limited,
            epsilon: s.epsilon,
            n_iters: s.n_iters,
        };
        let adversarial = evaluator.attack(&attack, &Defense::None)?;
        let mut rows = Vec::with_capacity(ks.len());
        for &k_votes in &ks {
            let start = Instant::now();
            let defense = Defense::Vote { sigma: s.sigma, k_votes };
            let genuine = evaluator.rates(&evaluator.eval_scores(None, &defense)?)?;
            let attacked = evaluator.eval_scores(adversarial.as_deref(), &defense)?;
            let adv = evaluator.rates(&attacked)?;
            rows.push(SweepVotesRow {
                k_votes,
                sigma: s.sigma,
                epsilon: s.epsilon,
                n_iters: s.n_iters,
                genuine_far: genuine.far,
                genuine_frr: genuine.frr,
                adversarial_far: adv.far,
                adversarial_frr: adv.frr,
                n_trials: attacked.len(),
                wall_time: elapsed(start, options),
            });
        }
        Ok(rows)
    })?;
    let path = config.out_dir.join(SWEEP_VOTES_FILE);
    write_csv(&path, &rows, stage)?;
    Ok(SweepVotesOutput { path, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepItersRow {
    pub n_iters: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub k_votes: usize,
    pub budget: usize,
    pub far: f64,
    pub frr: f64,
    pub n_trials: usize,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepItersOutput {
    pub path: PathBuf,
    pub rows: Vec<SweepItersRow>,
}

/// Perfect-knowledge attack on voting as the iteration count grows,
/// scored under that same voting defense.
pub fn cmd_sweep_iters(config: &ExperimentConfig, options: RunOptions) -> Result<SweepItersOutput> {
    let stage = "sweep-iters";
    config.validate()?;
    config.validate_for(stage)?;
    let s = &config.sweep_iters;
    let mut ns = s.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    let (model, corpus) = load_inputs(config)?;
    let pool = thread_pool(config.threads)?;
    let defense = Defense::Vote {
        sigma: s.sigma,
        k_votes: s.k_votes,
    };
    let rows = pool.install(|| -> Result<_> {
        let evaluator = Evaluator::new(&model, &corpus, config.seed)?;
        let mut rows = Vec::with_capacity(ns.len());
        for &n_iters in &ns {
            let start = Instant::now();
            let attack = Attack::Bim {
                knowledge: KnowledgeLevel::Perfect,
                epsilon: s.epsilon,
                n_iters,
            };
            let results = evaluator.attack(&attack, &defense)?.expect("a BIM attack yields results");
            let budget = n_iters * (s.k_votes + 1);
            if let Some(bad) = results.iter().find(|r| r.forward_backward_count != budget) {
                return Err(CliError::Invalid {
                    stage,
                    msg: format!("attack used {} passes, expected {budget}", bad.forward_backward_count),
                });
            }
            let scores = evaluator.eval_scores(Some(&results), &defense)?;
            let rates = evaluator.rates(&scores)?;
            rows.push(SweepItersRow {
                n_iters,
                epsilon: s.epsilon,
                sigma: s.sigma,
                k_votes: s.k_votes,
                budget,
                far: rates.far,
                frr: rates.frr,
                n_trials: scores.len(),
                wall_time: elapsed(start, options),
            });
        }
        Ok(rows)
    })?;
    let path = config.out_dir.join(SWEEP_ITERS_FILE);
    write_csv(&path, &rows, stage)?;
    Ok(SweepItersOutput { path, rows })
}
