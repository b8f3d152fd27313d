//! AM-softmax training with Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::defense::NeighborSampler;
use crate::model::{am_softmax_loss_on_tape, AsvModel, ModelConfig, CLASSIFIER, FROZEN};
use crate::seed::{derive_seed, rng_from_seed};
use crate::{math, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 keeps it constant.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Training crop length in seconds.
    pub crop_secs: f64,
    pub am_scale: f64,
    pub am_margin: f64,
    /// Noisy copies of every example added to the training pool; copy `i`
    /// of `n` carries white noise of std `augment_sigma·i/n` amplitude
    /// units.
    pub augment_copies: usize,
    pub augment_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay_every: 0,
            lr_decay_factor: 0.9,
            crop_secs: 2.0,
            am_scale: 30.0,
            am_margin: 0.1,
            augment_copies: 2,
            augment_sigma: 30.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The large-model schedule: lr 0.01, decayed by 10% every 2 epochs.
    pub fn large_model_schedule() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay_every: 2,
            lr_decay_factor: 0.9,
            ..Self::default()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            0 => self.learning_rate,
            every => self.learning_rate * math::pow(self.lr_decay_factor, (epoch / every) as f64),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.crop_secs > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate and crop length must be positive, got {} and {}",
                self.learning_rate, self.crop_secs
            )));
        }
        if !(self.augment_sigma >= 0.0) || !self.augment_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "augment_sigma must be ≥ 0, got {}",
                self.augment_sigma
            )));
        }
        crate::model::validate_am(self.am_scale, self.am_margin)
    }
}

/// One labeled training utterance.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub waveform: &'a [f64],
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AsvModel,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    /// Update every parameter that has a gradient.
    fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - math::pow(Self::BETA1, f64::from(self.t));
        let c2 = 1.0 - math::pow(Self::BETA2, f64::from(self.t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *w -= lr * (*m / c1) / (math::sqrt(*v / c2) + Self::EPS);
            }
        }
    }
}

fn check_corpus(examples: &[Example<'_>]) -> Result<usize> {
    let n_classes = examples.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; n_classes];
    for e in examples {
        counts[e.label] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateCorpus(format!("need at least 2 speakers, got {present}")));
    }
    if let Some(label) = counts.iter().position(|&c| c == 1) {
        return Err(Error::DegenerateCorpus(format!("speaker {label} has a single utterance")));
    }
    Ok(n_classes)
}

/// Per-band mean and standard deviation over every frame.
fn band_statistics(feats: &[Tensor], n_mels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; n_mels];
    let mut sq = vec![0.0; n_mels];
    let mut count = 0.0;
    for f in feats {
        for row in f.data().chunks(n_mels) {
            for ((s, q), v) in sum.iter_mut().zip(&mut sq).zip(row) {
                *s += v;
                *q += v * v;
            }
            count += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| math::sqrt((q / count - m * m).max(0.0)).max(1e-3))
        .collect();
    (mean, std)
}

/// Train a fresh model on `examples`.
///
/// Features are extracted once and their per-band statistics fix the
/// model's input standardization; each step draws a random fixed-length crop
/// per example. `on_epoch` sees the model after every epoch.
pub fn train<F>(model_config: ModelConfig, examples: &[Example<'_>], config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &AsvModel),
{
    config.validate()?;
    let n_classes = check_corpus(examples)?;
    let mut model = AsvModel::init(model_config, n_classes, derive_seed(config.seed, 0, "init"))?;
    let features = model.config().features.clone();
    let n_mels = features.n_mels;
    let crop_samples = math::round(config.crop_secs * f64::from(features.sample_rate)) as usize;
    let crop_frames = features.n_frames(crop_samples.max(features.win_length))?;
    let feats: Vec<Tensor> = examples
        .iter()
        .map(|e| model.front_end().extract(e.waveform))
        .collect::<Result<_>>()?;
    let (mean, std) = band_statistics(&feats, n_mels);
    model.set_input_standardization(&mean, &std)?;
    let copies = if config.augment_sigma > 0.0 { config.augment_copies } else { 0 };
    let mut pool: Vec<Vec<Tensor>> = feats.into_iter().map(|f| vec![f]).collect();
    for (i, e) in examples.iter().enumerate() {
        for c in 1..=copies {
            let sigma = config.augment_sigma * c as f64 / copies as f64;
            let seed = derive_seed(config.seed, (i * copies + c) as u64, "augment");
            let mut noisy = NeighborSampler::new(e.waveform, sigma, seed)?;
            pool[i].push(model.front_end().extract(&noisy.next_neighbor())?);
        }
    }

    let mut rng = rng_from_seed(derive_seed(config.seed, 0, "train"));
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let mut embeddings = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let f = &pool[i][rng.random_range(0..=copies)];
                let frames = f.shape()[0];
                let take = crop_frames.min(frames);
                let start = rng.random_range(0..=frames - take);
                let crop = f.data()[start * n_mels..(start + take) * n_mels].to_vec();
                let x = tape.constant(Tensor::matrix(take, n_mels, crop)?);
                embeddings.push(model.embed_features(&mut tape, &params, x)?);
                targets.push(examples[i].label);
            }
            let emb = tape.concat(&embeddings, 0)?;
            let classes = tape.l2_normalize(params.vars()[CLASSIFIER])?;
            let classes_t = tape.transpose(classes)?;
            let cosines = tape.matmul(emb, classes_t)?;
            let loss = am_softmax_loss_on_tape(&mut tape, cosines, &targets, config.am_scale, config.am_margin)?;
            total += tape.value(loss).data()[0] * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<Option<&Tensor>> = params
                .vars()
                .iter()
                .enumerate()
                .map(|(i, &v)| if FROZEN.contains(&i) { Ok(None) } else { grads.wrt(v).map(Some) })
                .collect::<Result<_>>()?;
            adam.step(model.params_mut(), &grads, lr);
        }
        let stats = EpochStats {
            epoch,
            loss: total / examples.len() as f64,
            learning_rate: lr,
        };
        on_epoch(&stats, &model);
        history.push(stats);
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidConfig("training diverged to non-finite parameters".into()));
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    fn tiny() -> (Vec<Vec<f64>>, Vec<usize>) {
        let corpus = generate_corpus(
            &CorpusConfig {
                n_speakers: 3,
                utterances_per_speaker: 3,
                duration_secs: 0.3,
                sample_rate: 8000,
            },
            4,
        )
        .unwrap();
        corpus
            .utterances
            .into_iter()
            .map(|u| (u.waveform.samples, u.speaker_id))
            .unzip()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 8,
            batch_size: 4,
            learning_rate: 1e-2,
            crop_secs: 0.2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (waves, labels) = tiny();
        let examples: Vec<Example<'_>> =
            waves.iter().zip(&labels).map(|(w, &label)| Example { waveform: w, label }).collect();
        let mut seen = 0;
        let a = train(ModelConfig::default(), &examples, &quick(), |_, _| seen += 1).unwrap();
        let b = train(ModelConfig::default(), &examples, &quick(), |_, _| {}).unwrap();
        assert_eq!(seen, 8);
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().loss < a.history[0].loss);
        assert_eq!(a.model.n_classes(), 3);
    }

    #[test]
    fn degenerate_corpora_are_rejected() {
        let (waves, _) = tiny();
        let one_speaker: Vec<Example<'_>> = waves.iter().map(|w| Example { waveform: w, label: 0 }).collect();
        assert!(matches!(
            train(ModelConfig::default(), &one_speaker, &quick(), |_, _| {}),
            Err(Error::DegenerateCorpus(_))
        ));
        let singleton = [
            Example { waveform: &waves[0], label: 0 },
            Example { waveform: &waves[1], label: 0 },
            Example { waveform: &waves[2], label: 1 },
        ];
        assert!(matches!(
            train(ModelConfig::default(), &singleton, &quick(), |_, _| {}),
            Err(Error::DegenerateCorpus(_))
        ));
        assert!(train(ModelConfig::default(), &[], &quick(), |_, _| {}).is_err());
    }

    #[test]
    fn augmentation_changes_training_and_is_validated() {
        let (waves, labels) = tiny();
        let examples: Vec<Example<'_>> =
            waves.iter().zip(&labels).map(|(w, &label)| Example { waveform: w, label }).collect();
        let plain = TrainConfig { augment_copies: 0, ..quick() };
        let a = train(ModelConfig::default(), &examples, &plain, |_, _| {}).unwrap();
        let b = train(ModelConfig::default(), &examples, &quick(), |_, _| {}).unwrap();
        assert_ne!(a.history, b.history);
        let bad = TrainConfig { augment_sigma: -1.0, ..quick() };
        assert!(matches!(
            train(ModelConfig::default(), &examples, &bad, |_, _| {}),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn decay_schedule() {
        let c = TrainConfig::large_model_schedule();
        assert_eq!(c.learning_rate_at(0), 0.01);
        assert_eq!(c.learning_rate_at(1), 0.01);
        assert!((c.learning_rate_at(4) - 0.01 * 0.81).abs() < 1e-15);
        assert_eq!(TrainConfig::default().learning_rate_at(40), 1e-3);
    }
}
