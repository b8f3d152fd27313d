//! Experiment configuration.
//!
//! A config file is TOML. It may name a `preset` (`"desk"` or `"paper"`,
//! default `"desk"`); every key the file sets overrides the preset, section
//! by section, and arrays replace the preset's array wholesale. Unknown keys
//! are errors. Command-line flags override the file.

use std::path::{Path, PathBuf};

use asv_vote_core::attack::{AttackConfig, Knowledge};
use asv_vote_core::corpus::CorpusConfig;
use asv_vote_core::defense::{FilterKind, FilterSpec, VoteConfig};
use asv_vote_core::features::FeatureConfig;
use asv_vote_core::model::{ModelConfig, PoolingKind};
use asv_vote_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackGrid,
    pub defense: DefenseGrid,
    pub sweep_votes: SweepVotesSection,
    pub sweep_iters: SweepItersSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub n_target_trials: usize,
    pub n_nontarget_trials: usize,
    /// Trials assigned to the dev side; the rest are eval.
    pub dev_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub pooling: String,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub n_mels: usize,
    pub n_fft: usize,
    pub win_secs: f64,
    pub hop_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 0 disables step decay.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub crop_secs: f64,
    pub am_scale: f64,
    pub am_margin: f64,
    /// Noisy training copies per utterance and the largest noise std, in
    /// amplitude units.
    pub augment_copies: usize,
    pub augment_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackGrid {
    /// `"limited"` and/or `"perfect"`. A perfect-knowledge attacker adapts
    /// to whichever defense its report row uses.
    pub knowledge: Vec<String>,
    pub epsilons: Vec<f64>,
    pub n_iters: Vec<usize>,
    /// Write adversarial WAVs and a manifest during `evaluate`.
    pub export_wav: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseGrid {
    pub sigmas: Vec<f64>,
    pub k_votes: Vec<usize>,
    pub filters: Vec<FilterSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub kind: String,
    pub kernel_size: usize,
    pub gaussian_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepVotesSection {
    pub epsilon: f64,
    pub n_iters: usize,
    pub sigma: f64,
    pub k_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepItersSection {
    pub epsilon: f64,
    pub sigma: f64,
    pub k_votes: usize,
    pub n_values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Preset::Desk),
            "paper" | "paper-preset" => Some(Preset::Paper),
            _ => None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    /// `Desk` evaluates one vote setting; `Paper` the full σ grid.
    pub fn preset(preset: Preset) -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let sigmas = match preset {
            Preset::Desk => vec![30.0],
            Preset::Paper => asv_vote_core::defense::SIGMA_SWEEP.to_vec(),
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: 0,
            corpus: CorpusSection {
                n_speakers: 20,
                utterances_per_speaker: 10,
                duration_secs: 2.0,
                sample_rate: model.features.sample_rate,
                n_target_trials: 300,
                n_nontarget_trials: 300,
                dev_trials: 400,
            },
            model: ModelSection {
                pooling: model.pooling.name().to_string(),
                hidden_dim: model.hidden_dim,
                embedding_dim: model.embedding_dim,
                n_mels: model.features.n_mels,
                n_fft: model.features.n_fft,
                win_secs: 0.025,
                hop_secs: 0.010,
            },
            train: TrainSection {
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                lr_decay_every: train.lr_decay_every,
                lr_decay_factor: train.lr_decay_factor,
                crop_secs: train.crop_secs,
                am_scale: train.am_scale,
                am_margin: train.am_margin,
                augment_copies: train.augment_copies,
                augment_sigma: train.augment_sigma,
            },
            attack: AttackGrid {
                knowledge: vec!["limited".into()],
                epsilons: asv_vote_core::attack::EPSILON_SWEEP.to_vec(),
                n_iters: vec![asv_vote_core::attack::DEFAULT_N_ITERS],
                export_wav: false,
            },
            defense: DefenseGrid {
                sigmas,
                k_votes: vec![asv_vote_core::defense::DEFAULT_K_VOTES],
                filters: FilterSpec::defaults()
                    .iter()
                    .map(|f| FilterSection {
                        kind: f.kind.name().to_string(),
                        kernel_size: f.kernel_size,
                        gaussian_std: f.gaussian_std,
                    })
                    .collect(),
            },
            sweep_votes: SweepVotesSection {
                epsilon: 5.0,
                n_iters: asv_vote_core::attack::DEFAULT_N_ITERS,
                sigma: 30.0,
                k_values: vec![0, 1, 2, 5, 10, 20, 50],
            },
            sweep_iters: SweepItersSection {
                epsilon: 5.0,
                sigma: asv_vote_core::defense::PERFECT_KNOWLEDGE_SIGMA,
                k_votes: asv_vote_core::defense::PERFECT_KNOWLEDGE_K_VOTES,
                n_values: vec![1, 5, 10, 20, 40],
            },
        }
    }

    /// Parse TOML text, layering it over its preset.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config_err = |msg: String| CliError::Config {
            origin: origin.to_string(),
            msg,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        let preset = match table.remove("preset") {
            None => Preset::Desk,
            Some(toml::Value::String(name)) => {
                Preset::parse(&name).ok_or_else(|| config_err(format!("unknown preset {name:?}")))?
            }
            Some(other) => return Err(config_err(format!("preset must be a string, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| config_err(e.to_string()))?;
        merge(&mut base, table);
        let config: Self = base.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        config.validate().map_err(|e| match e {
            CliError::Config { msg, .. } => config_err(msg),
            other => other,
        })?;
        Ok(config)
    }

    /// Load `path`; the name `paper-preset` resolves to the built-in paper
    /// grid without touching the filesystem.
    pub fn load(path: &Path) -> Result<Self> {
        if let Some(preset) = path.to_str().filter(|s| !s.ends_with(".toml")).and_then(Preset::parse) {
            return Ok(Self::preset(preset));
        }
        let text = std::fs::read_to_string(path).map_err(io_err("read config", path))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn invalid(msg: impl Into<String>) -> CliError {
        CliError::Config {
            origin: "validation".into(),
            msg: msg.into(),
        }
    }

    /// Checks that apply to every subcommand.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.train_config()?;
        self.filter_specs()?;
        self.knowledge_levels()?;
        let c = &self.corpus;
        if c.dev_trials == 0 || c.dev_trials >= c.n_target_trials + c.n_nontarget_trials {
            return Err(Self::invalid(format!(
                "dev_trials must be in 1..{}",
                c.n_target_trials + c.n_nontarget_trials
            )));
        }
        for &eps in self.attack.epsilons.iter().chain([&self.sweep_votes.epsilon, &self.sweep_iters.epsilon]) {
            AttackConfig::new(eps, 1).map_err(|e| Self::invalid(e.to_string()))?;
        }
        for &sigma in self.defense.sigmas.iter().chain([&self.sweep_votes.sigma, &self.sweep_iters.sigma]) {
            VoteConfig::new(sigma, 0, 0).map_err(|e| Self::invalid(e.to_string()))?;
        }
        if self.attack.n_iters.contains(&0) || self.sweep_votes.n_iters == 0 || self.sweep_iters.n_values.contains(&0) {
            return Err(Self::invalid("attack iteration counts must be positive"));
        }
        Ok(())
    }

    /// Sweep grids must be non-empty. The evaluate grid always holds the
    /// no-attack and no-defense baselines, so its lists may be empty.
    pub fn validate_for(&self, command: &str) -> Result<()> {
        let empty = match command {
            "evaluate" if self.defense.sigmas.is_empty() != self.defense.k_votes.is_empty() => {
                Some("defense.sigmas and defense.k_votes (both or neither)")
            }
            "sweep-votes" if self.sweep_votes.k_values.is_empty() => Some("sweep_votes.k_values"),
            "sweep-iters" if self.sweep_iters.n_values.is_empty() => Some("sweep_iters.n_values"),
            _ => None,
        };
        match empty {
            Some(field) => Err(Self::invalid(format!("{field} must not be empty for {command}"))),
            None => Ok(()),
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            n_speakers: self.corpus.n_speakers,
            utterances_per_speaker: self.corpus.utterances_per_speaker,
            duration_secs: self.corpus.duration_secs,
            sample_rate: self.corpus.sample_rate,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let pooling =
            PoolingKind::parse(&m.pooling).ok_or_else(|| Self::invalid(format!("unknown pooling {:?}", m.pooling)))?;
        let features =
            FeatureConfig::from_durations(self.corpus.sample_rate, m.win_secs, m.hop_secs, m.n_fft, m.n_mels);
        features.validate().map_err(|e| Self::invalid(e.to_string()))?;
        Ok(ModelConfig {
            features,
            hidden_dim: m.hidden_dim,
            embedding_dim: m.embedding_dim,
            pooling,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) || !(t.crop_secs > 0.0) {
            return Err(Self::invalid("epochs, batch_size, learning_rate and crop_secs must be positive"));
        }
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
            crop_secs: t.crop_secs,
            am_scale: t.am_scale,
            am_margin: t.am_margin,
            augment_copies: t.augment_copies,
            augment_sigma: t.augment_sigma,
            seed: self.seed,
        })
    }

    pub fn filter_specs(&self) -> Result<Vec<FilterSpec>> {
        self.defense
            .filters
            .iter()
            .map(|f| {
                let kind =
                    FilterKind::parse(&f.kind).ok_or_else(|| Self::invalid(format!("unknown filter {:?}", f.kind)))?;
                FilterSpec::new(kind, f.kernel_size, f.gaussian_std).map_err(|e| Self::invalid(e.to_string()))
            })
            .collect()
    }

    /// Knowledge levels as written; `Perfect` is resolved per defense row.
    pub fn knowledge_levels(&self) -> Result<Vec<KnowledgeLevel>> {
        self.attack
            .knowledge
            .iter()
            .map(|k| match k.as_str() {
                "limited" => Ok(KnowledgeLevel::Limited),
                "perfect" => Ok(KnowledgeLevel::Perfect),
                other => Err(Self::invalid(format!("unknown knowledge level {other:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnowledgeLevel {
    Limited,
    Perfect,
}

impl KnowledgeLevel {
    pub fn name(self) -> &'static str {
        match self {
            KnowledgeLevel::Limited => "limited",
            KnowledgeLevel::Perfect => "perfect",
        }
    }

    /// The concrete attacker against a given defense.
    pub fn against(self, defense: &crate::runner::Defense) -> Knowledge {
        use crate::runner::Defense;
        match (self, defense) {
            (KnowledgeLevel::Perfect, Defense::Vote { sigma, k_votes }) => Knowledge::PerfectVsVoting {
                k_votes: *k_votes,
                sigma: *sigma,
            },
            (KnowledgeLevel::Perfect, Defense::Filter(spec)) => Knowledge::PerfectVsFilter(*spec),
            _ => Knowledge::Limited,
        }
    }
}

/// Recursively overlay `over` onto `base`. Tables merge; anything else
/// replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
