//! Speaker embedder and cosine scoring.
//!
//! Frame-level MLP (`n_mels → hidden → hidden`, tanh) over log-mel features,
//! mean / self-attentive / attentive-statistics pooling, a linear projection
//! and L2 normalization. Trials are scored by the cosine of the two
//! embeddings.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{log_sum_exp, Tape, Tensor, Var};
use crate::features::{FeatureConfig, FrontEnd};
use crate::seed::rng_from_seed;
use crate::{math, Error, Result};

/// Variance floor inside the attentive-statistics standard deviation.
pub const ASP_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    Mean,
    Sap,
    Asp,
}

impl PoolingKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolingKind::Mean => "mean",
            PoolingKind::Sap => "sap",
            PoolingKind::Asp => "asp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Some(PoolingKind::Mean),
            "sap" => Some(PoolingKind::Sap),
            "asp" => Some(PoolingKind::Asp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub pooling: PoolingKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            hidden_dim: 64,
            embedding_dim: 32,
            pooling: PoolingKind::Sap,
        }
    }
}

impl ModelConfig {
    fn pooled_dim(&self) -> usize {
        match self.pooling {
            PoolingKind::Asp => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }
}

/// Parameter names, in checkpoint order.
pub const PARAM_NAMES: [&str; 12] = [
    "input.shift",
    "input.scale",
    "frame1.weight",
    "frame1.bias",
    "frame2.weight",
    "frame2.bias",
    "attention.weight",
    "attention.bias",
    "attention.context",
    "projection.weight",
    "projection.bias",
    "classifier.weight",
];

pub(crate) const IN_SHIFT: usize = 0;
pub(crate) const IN_SCALE: usize = 1;
const W1: usize = 2;
const B1: usize = 3;
const W2: usize = 4;
const B2: usize = 5;
const ATT_W: usize = 6;
const ATT_B: usize = 7;
const ATT_V: usize = 8;
const PROJ_W: usize = 9;
const PROJ_B: usize = 10;
pub(crate) const CLASSIFIER: usize = 11;

/// Parameters fixed during gradient training: the per-band feature
/// standardization, set from training-set statistics.
pub const FROZEN: [usize; 2] = [IN_SHIFT, IN_SCALE];

/// Trained (or freshly initialized) scoring model.
#[derive(Debug, Clone)]
pub struct AsvModel {
    config: ModelConfig,
    front_end: FrontEnd,
    params: Vec<Tensor>,
}

/// Cosine similarity in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Self {
        Score(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Parameters bound as nodes on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    input_scale: Var,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn attention(&self) -> Attention {
        Attention {
            weight: self.vars[ATT_W],
            bias: self.vars[ATT_B],
            context: self.vars[ATT_V],
        }
    }
}

/// Attention scorer `vᵀ tanh(W h + b)` applied to every frame `h`.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub weight: Var,
    pub bias: Var,
    pub context: Var,
}

fn expected_shapes(config: &ModelConfig, n_classes: usize) -> [Vec<usize>; 12] {
    let (m, h, e, p) = (
        config.features.n_mels,
        config.hidden_dim,
        config.embedding_dim,
        config.pooled_dim(),
    );
    [
        vec![m],
        vec![m],
        vec![m, h],
        vec![h],
        vec![h, h],
        vec![h],
        vec![h, h],
        vec![h],
        vec![h, 1],
        vec![p, e],
        vec![e],
        vec![n_classes, e],
    ]
}

impl AsvModel {
    /// Glorot-uniform initialization, zero biases, identity input
    /// standardization.
    pub fn init(config: ModelConfig, n_classes: usize, seed: u64) -> Result<Self> {
        if config.hidden_dim == 0 || config.embedding_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let params = expected_shapes(&config, n_classes)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let numel: usize = shape.iter().product();
                let data = if i == IN_SCALE {
                    vec![1.0; numel]
                } else if shape.len() == 1 {
                    vec![0.0; numel]
                } else {
                    let limit = math::sqrt(6.0 / (shape[0] + shape[1]) as f64);
                    (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(config, params)
    }

    /// Rebuild from parameters in [`PARAM_NAMES`] order.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        if params.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                PARAM_NAMES.len(),
                params.len()
            )));
        }
        let n_classes = params[CLASSIFIER].shape().first().copied().unwrap_or(0);
        for ((name, want), got) in PARAM_NAMES.iter().zip(expected_shapes(&config, n_classes)).zip(&params) {
            if got.shape() != want.as_slice() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {name}: expected shape {want:?}, got {:?}",
                    got.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::InvalidConfig(format!("parameter {name} is not finite")));
            }
        }
        let front_end = FrontEnd::new(config.features.clone())?;
        Ok(Self {
            config,
            front_end,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn front_end(&self) -> &FrontEnd {
        &self.front_end
    }

    pub fn n_classes(&self) -> usize {
        self.params[CLASSIFIER].shape()[0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(self.params.iter())
    }

    /// Put every parameter on `tape`; when `trainable`, all but the
    /// [`FROZEN`] ones become leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if trainable && !FROZEN.contains(&i) {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let scale = self.params[IN_SCALE].data();
        let m = scale.len();
        let mut diag = vec![0.0; m * m];
        for (i, s) in scale.iter().enumerate() {
            diag[i * m + i] = *s;
        }
        let input_scale = tape.constant(Tensor::from_parts_unchecked(vec![m, m], diag));
        BoundParams { vars, input_scale }
    }

    /// Set the input standardization to `(f − mean) / std` per band.
    pub fn set_input_standardization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let m = self.config.features.n_mels;
        if mean.len() != m || std.len() != m {
            return Err(Error::ShapeMismatch {
                op: "input standardization",
                lhs: vec![m],
                rhs: vec![mean.len(), std.len()],
            });
        }
        if mean.iter().chain(std).any(|v| !v.is_finite()) || std.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidConfig("standardization needs finite means and positive stds".into()));
        }
        self.params[IN_SHIFT] = Tensor::vector(mean.iter().map(|v| -v).collect());
        self.params[IN_SCALE] = Tensor::vector(std.iter().map(|s| 1.0 / s).collect());
        Ok(())
    }

    /// Unit embedding `[1, embedding_dim]` from log-mel features `[frames, n_mels]`.
    pub fn embed_features(&self, tape: &mut Tape, params: &BoundParams, feats: Var) -> Result<Var> {
        let v = &params.vars;
        let z = tape.broadcast_add(feats, v[IN_SHIFT])?;
        let z = tape.matmul(z, params.input_scale)?;
        let h = tape.matmul(z, v[W1])?;
        let h = tape.broadcast_add(h, v[B1])?;
        let h = tape.tanh(h);
        let h = tape.matmul(h, v[W2])?;
        let h = tape.broadcast_add(h, v[B2])?;
        let h = tape.tanh(h);
        let pooled = match self.config.pooling {
            PoolingKind::Mean => pool_mean(tape, h)?,
            PoolingKind::Sap => pool_sap(tape, h, params.attention())?,
            PoolingKind::Asp => pool_asp(tape, h, params.attention())?,
        };
        let e = tape.matmul(pooled, v[PROJ_W])?;
        let e = tape.broadcast_add(e, v[PROJ_B])?;
        tape.l2_normalize(e)
    }

    /// Unit embedding of a waveform node.
    pub fn embed_on_tape(&self, tape: &mut Tape, params: &BoundParams, waveform: Var) -> Result<Var> {
        let feats = self.front_end.fbank(tape, waveform)?;
        self.embed_features(tape, params, feats)
    }

    pub fn embed(&self, waveform: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(waveform.to_vec()));
        let e = self.embed_on_tape(&mut tape, &params, x)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// `s = f(x_t, x_e)`: cosine of the two embeddings.
    pub fn score(&self, x_t: &[f64], x_e: &[f64]) -> Result<Score> {
        let et = self.embed(x_t)?;
        let ee = self.embed(x_e)?;
        Ok(Score::new(cosine_similarity(&et, &ee)))
    }

    /// Score against a precomputed enrollment embedding.
    pub fn score_against(&self, x_t: &[f64], enroll_embedding: &[f64]) -> Result<f64> {
        Ok(cosine_similarity(&self.embed(x_t)?, enroll_embedding))
    }

    /// Score and its gradient with respect to every test sample.
    pub fn score_with_grad(&self, x_t: &[f64], enroll_embedding: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.leaf(Tensor::vector(x_t.to_vec()));
        let e = self.embed_on_tape(&mut tape, &params, x)?;
        let enroll = tape.constant(Tensor::matrix(1, enroll_embedding.len(), enroll_embedding.to_vec())?);
        let s = crate::autodiff::cosine(&mut tape, e, enroll)?;
        let value = tape.value(s).data()[0];
        let grads = tape.backward(s)?;
        Ok((value, grads.wrt(x)?.data().to_vec()))
    }

    /// Scorer for one trial with the enrollment side fixed.
    pub fn trial_scorer(&self, x_e: &[f64]) -> Result<TrialScorer<'_>> {
        Ok(TrialScorer {
            model: self,
            enroll: self.embed(x_e)?,
        })
    }
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = math::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    dot / (na * nb).max(f64::MIN_POSITIVE)
}

fn check_frames(tape: &Tape, frames: Var, op: &'static str) -> Result<(usize, usize)> {
    match tape.value(frames).dims2() {
        Some((f, d)) if f >= 1 => Ok((f, d)),
        _ => Err(Error::InvalidOp {
            op,
            msg: format!("needs ≥ 1 frame, got shape {:?}", tape.value(frames).shape()),
        }),
    }
}

/// Attention logits `[1, frames]`.
pub fn attention_logits(tape: &mut Tape, frames: Var, attention: Attention) -> Result<Var> {
    let (f, _) = check_frames(tape, frames, "attention")?;
    let a = tape.matmul(frames, attention.weight)?;
    let a = tape.broadcast_add(a, attention.bias)?;
    let a = tape.tanh(a);
    let logits = tape.matmul(a, attention.context)?;
    tape.reshape(logits, &[1, f])
}

pub fn pool_mean(tape: &mut Tape, frames: Var) -> Result<Var> {
    let (f, _) = check_frames(tape, frames, "mean pooling")?;
    let w = tape.constant(Tensor::filled(&[1, f], 1.0 / f as f64));
    tape.matmul(w, frames)
}

/// Softmax-weighted mean of frames for explicit logits `[1, frames]`.
pub fn pool_sap_from_logits(tape: &mut Tape, frames: Var, logits: Var) -> Result<Var> {
    check_frames(tape, frames, "sap pooling")?;
    let w = tape.softmax(logits, 1)?;
    tape.matmul(w, frames)
}

/// Self-attentive pooling `[frames, d] → [1, d]`.
pub fn pool_sap(tape: &mut Tape, frames: Var, attention: Attention) -> Result<Var> {
    let logits = attention_logits(tape, frames, attention)?;
    pool_sap_from_logits(tape, frames, logits)
}

/// Attention-weighted mean and standard deviation, `[1, 2d]`.
pub fn pool_asp_from_logits(tape: &mut Tape, frames: Var, logits: Var) -> Result<Var> {
    check_frames(tape, frames, "asp pooling")?;
    let w = tape.softmax(logits, 1)?;
    let mean = tape.matmul(w, frames)?;
    let sq = tape.square(frames);
    let second = tape.matmul(w, sq)?;
    let mean_sq = tape.square(mean);
    let var = tape.sub(second, mean_sq)?;
    let std = tape.sqrt(var, ASP_VARIANCE_FLOOR);
    tape.concat(&[mean, std], 1)
}

/// Attentive statistics pooling `[frames, d] → [1, 2d]`.
pub fn pool_asp(tape: &mut Tape, frames: Var, attention: Attention) -> Result<Var> {
    let logits = attention_logits(tape, frames, attention)?;
    pool_asp_from_logits(tape, frames, logits)
}

/// Additive-margin softmax loss for one example:
/// `−log(e^{s(cos_y − m)} / (e^{s(cos_y − m)} + Σ_{j≠y} e^{s·cos_j}))`.
pub fn am_softmax_loss(cosines: &[f64], true_class: usize, scale: f64, margin: f64) -> Result<f64> {
    if true_class >= cosines.len() {
        return Err(Error::InvalidClass {
            index: true_class,
            classes: cosines.len(),
        });
    }
    validate_am(scale, margin)?;
    let logits: Vec<f64> = cosines
        .iter()
        .enumerate()
        .map(|(j, &c)| scale * if j == true_class { c - margin } else { c })
        .collect();
    // −log p_y = log(1 + Σ_{j≠y} e^{z_j − z_y}), kept in log1p form so the
    // loss stays accurate near zero
    let zy = logits[true_class];
    let lead = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_class)
        .map(|(_, z)| z - zy)
        .fold(f64::NEG_INFINITY, f64::max);
    if lead > 0.0 {
        return Ok(log_sum_exp(&logits) - zy);
    }
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_class)
        .map(|(_, z)| math::exp(z - zy))
        .sum();
    Ok(math::ln_1p(rest))
}

pub(crate) fn validate_am(scale: f64, margin: f64) -> Result<()> {
    if !(scale > 0.0) || !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidConfig(format!(
            "AM-softmax needs scale > 0 and 0 ≤ margin < 1, got scale {scale}, margin {margin}"
        )));
    }
    Ok(())
}

/// Batched AM-softmax on the tape: `cosines` is `[batch, classes]`.
pub fn am_softmax_loss_on_tape(
    tape: &mut Tape,
    cosines: Var,
    targets: &[usize],
    scale: f64,
    margin: f64,
) -> Result<Var> {
    validate_am(scale, margin)?;
    let (b, c) = tape.value(cosines).dims2().ok_or_else(|| Error::InvalidOp {
        op: "am_softmax",
        msg: "cosines must be rank 2".to_string(),
    })?;
    let mut margins = vec![0.0; b * c];
    for (row, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::InvalidClass { index: t, classes: c });
        }
        margins[row * c + t] = margin;
    }
    let margins = tape.constant(Tensor::matrix(b, c, margins)?);
    let shifted = tape.sub(cosines, margins)?;
    let logits = tape.scale(shifted, scale);
    tape.cross_entropy(logits, targets)
}

/// A scoring function of the test waveform, the enrollment side held fixed.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> Result<f64>;
    fn score_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Model plus a fixed enrollment embedding.
#[derive(Debug, Clone)]
pub struct TrialScorer<'a> {
    model: &'a AsvModel,
    enroll: Vec<f64>,
}

impl<'a> TrialScorer<'a> {
    pub fn with_embedding(model: &'a AsvModel, enroll: Vec<f64>) -> Self {
        Self { model, enroll }
    }

    pub fn enroll_embedding(&self) -> &[f64] {
        &self.enroll
    }
}

impl Scorer for TrialScorer<'_> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.model.score_against(x, &self.enroll)
    }

    fn score_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.score_with_grad(x, &self.enroll)
    }
}

/// `f(x) = w·x + b`; a closed-form stand-in for the real model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Scorer for LinearScorer {
    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                op: "linear scorer",
                lhs: vec![self.weights.len()],
                rhs: vec![x.len()],
            });
        }
        Ok(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    fn score_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.score(x)?, self.weights.clone()))
    }
}

impl core::fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

