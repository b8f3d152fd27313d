//! Scoring, attacking and defending the eval side of a trial list.

use asv_vote_core::attack::{run_attack, AdversarialResult, AttackConfig};
use asv_vote_core::defense::{vote_score, FilterSpec, FilteredScorer, VoteConfig};
use asv_vote_core::metrics::{calibrate_threshold, far, frr, Partition, Threshold, Trial};
use asv_vote_core::model::{AsvModel, Scorer, TrialScorer};
use asv_vote_core::seed::derive_seed;
use rayon::prelude::*;

use crate::config::KnowledgeLevel;
use crate::corpus_io::LoadedCorpus;
use crate::error::{core_err, CliError, Result};

/// A defense setting applied at scoring time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defense {
    None,
    Vote { sigma: f64, k_votes: usize },
    Filter(FilterSpec),
}

impl Defense {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Vote { .. } => "vote",
            Defense::Filter(spec) => spec.kind.name(),
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            Defense::Vote { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    pub fn k_votes(&self) -> Option<usize> {
        match self {
            Defense::Vote { k_votes, .. } => Some(*k_votes),
            _ => None,
        }
    }
}

/// An attack setting; `None` scores the genuine test utterances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    None,
    Bim {
        knowledge: KnowledgeLevel,
        epsilon: f64,
        n_iters: usize,
    },
}

impl Attack {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Bim { knowledge, .. } => knowledge.name(),
        }
    }

    /// Whether the perturbation depends on the defense being attacked.
    pub fn adapts_to_defense(&self) -> bool {
        matches!(
            self,
            Attack::Bim {
                knowledge: KnowledgeLevel::Perfect,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub far: f64,
    pub frr: f64,
}

/// A trained model bound to a corpus, with τ calibrated on the dev side
/// (no attack, no defense).
pub struct Evaluator<'a> {
    model: &'a AsvModel,
    corpus: &'a LoadedCorpus,
    seed: u64,
    embeddings: Vec<Vec<f64>>,
    eval: Vec<Trial>,
    threshold: Threshold,
}

impl<'a> Evaluator<'a> {
    /// Must run inside the caller's thread pool.
    pub fn new(model: &'a AsvModel, corpus: &'a LoadedCorpus, seed: u64) -> Result<Self> {
        let embeddings = corpus
            .waveforms
            .par_iter()
            .map(|w| model.embed(w))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(core_err("embed corpus"))?;
        let eval: Vec<Trial> = corpus.trials.eval().copied().collect();
        if eval.is_empty() {
            return Err(CliError::Invalid {
                stage: "evaluate",
                msg: "trial list has no eval trials".into(),
            });
        }
        let mut ev = Self {
            model,
            corpus,
            seed,
            embeddings,
            eval,
            threshold: Threshold {
                tau: 0.0,
                dev_far_at_tau: 0.0,
                dev_frr_at_tau: 0.0,
            },
        };
        let dev: Vec<Trial> = corpus.trials.dev().copied().collect();
        let scores = ev.score_trials(&dev, None, &Defense::None)?;
        let (t, n) = split_by_label(&dev, &scores);
        ev.threshold = calibrate_threshold(&t, &n).map_err(core_err("calibrate threshold"))?;
        Ok(ev)
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn eval_trials(&self) -> &[Trial] {
        &self.eval
    }

    pub fn scorer(&self, trial: &Trial) -> TrialScorer<'a> {
        TrialScorer::with_embedding(self.model, self.embeddings[trial.enroll].clone())
    }

    /// Undefended scores for every trial, in trial order.
    pub fn raw_scores(&self) -> Result<Vec<(Trial, Partition, f64)>> {
        let all: Vec<(Trial, Partition)> = self.corpus.trials.iter().map(|(t, p)| (*t, p)).collect();
        let trials: Vec<Trial> = all.iter().map(|(t, _)| *t).collect();
        let scores = self.score_trials(&trials, None, &Defense::None)?;
        Ok(all.into_iter().zip(scores).map(|((t, p), s)| (t, p, s)).collect())
    }

    /// Adversarial versions of every eval test utterance. `defense` only
    /// matters for perfect-knowledge attackers.
    pub fn attack(&self, attack: &Attack, defense: &Defense) -> Result<Option<Vec<AdversarialResult>>> {
        let Attack::Bim {
            knowledge,
            epsilon,
            n_iters,
        } = *attack
        else {
            return Ok(None);
        };
        let base = AttackConfig::new(epsilon, n_iters)
            .map_err(core_err("attack"))?
            .with_knowledge(knowledge.against(defense));
        self.eval
            .par_iter()
            .map(|trial| {
                let config = base.with_seed(derive_seed(self.seed, trial.trial_id as u64, "attack"));
                run_attack(&self.scorer(trial), &self.corpus.waveforms[trial.test], trial.is_target, &config)
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(core_err("attack"))
    }

    /// Scores of `trials` under `defense`; test inputs come from
    /// `adversarial` when given, else from the corpus.
    pub fn score_trials(
        &self,
        trials: &[Trial],
        adversarial: Option<&[AdversarialResult]>,
        defense: &Defense,
    ) -> Result<Vec<f64>> {
        if let Some(adv) = adversarial {
            if adv.len() != trials.len() {
                return Err(CliError::Invalid {
                    stage: "score",
                    msg: format!("{} adversarial inputs for {} trials", adv.len(), trials.len()),
                });
            }
        }
        (0..trials.len())
            .into_par_iter()
            .map(|i| {
                let trial = &trials[i];
                let x = match adversarial {
                    Some(adv) => adv[i].x_adv.as_slice(),
                    None => self.corpus.waveforms[trial.test].as_slice(),
                };
                let scorer = self.scorer(trial);
                match defense {
                    Defense::None => scorer.score(x),
                    Defense::Vote { sigma, k_votes } => {
                        let vote = VoteConfig::for_trial(*sigma, *k_votes, self.seed, trial.trial_id)?;
                        vote_score(&scorer, x, &vote)
                    }
                    Defense::Filter(spec) => FilteredScorer {
                        inner: &scorer,
                        spec: *spec,
                    }
                    .score(x),
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(core_err("score"))
    }

    /// Eval scores for one (attack, defense) cell.
    pub fn eval_scores(&self, adversarial: Option<&[AdversarialResult]>, defense: &Defense) -> Result<Vec<f64>> {
        self.score_trials(&self.eval, adversarial, defense)
    }

    /// FAR and FRR of eval scores at the calibrated τ.
    pub fn rates(&self, scores: &[f64]) -> Result<Rates> {
        let (t, n) = split_by_label(&self.eval, scores);
        Ok(Rates {
            far: far(&n, self.threshold.tau).map_err(core_err("rates"))?,
            frr: frr(&t, self.threshold.tau).map_err(core_err("rates"))?,
        })
    }
}

/// `(target scores, non-target scores)`.
pub fn split_by_label(trials: &[Trial], scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut n = Vec::new();
    for (trial, &s) in trials.iter().zip(scores) {
        if trial.is_target {
            t.push(s);
        } else {
            n.push(s);
        }
    }
    (t, n)
}
