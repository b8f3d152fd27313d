//! Gaussian-ball voting and the filter baselines.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::model::{AsvModel, Score, Scorer};
use crate::seed::{derive_seed, rng_from_seed};
use crate::waveform::clip_to_range;
use crate::{math, Error, Result, AMPLITUDE_UNIT};

/// Votes used against limited-knowledge attackers.
pub const DEFAULT_K_VOTES: usize = 50;
/// Noise levels swept for the voting defense, in amplitude units.
pub const SIGMA_SWEEP: [f64; 6] = [1.0, 15.0, 30.0, 60.0, 90.0, 120.0];
/// Votes assumed by the defense-aware attacker case study.
pub const PERFECT_KNOWLEDGE_K_VOTES: usize = 5;
pub const PERFECT_KNOWLEDGE_SIGMA: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    /// Noise standard deviation in amplitude units.
    pub sigma: f64,
    pub k_votes: usize,
    pub seed: u64,
}

impl VoteConfig {
    pub fn new(sigma: f64, k_votes: usize, seed: u64) -> Result<Self> {
        let c = Self { sigma, k_votes, seed };
        c.validate()?;
        Ok(c)
    }

    /// Inference-time config for one trial; the seed lives in the
    /// `"defense"` domain.
    pub fn for_trial(sigma: f64, k_votes: usize, global_seed: u64, trial_id: usize) -> Result<Self> {
        Self::new(sigma, k_votes, derive_seed(global_seed, trial_id as u64, "defense"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Draws `x + n`, `n ~ N(0, (σ·unit)²)` per sample, clipped to `[-1, 1]`.
#[derive(Debug)]
pub(crate) struct NeighborSampler<'a> {
    center: &'a [f64],
    normal: Normal<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> NeighborSampler<'a> {
    pub(crate) fn new(center: &'a [f64], sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma * AMPLITUDE_UNIT)
            .map_err(|e| Error::InvalidConfig(format!("vote noise: {e}")))?;
        Ok(Self {
            center,
            normal,
            rng: rng_from_seed(seed),
        })
    }

    pub(crate) fn next_neighbor(&mut self) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .center
            .iter()
            .map(|v| v + self.normal.sample(&mut self.rng))
            .collect();
        clip_to_range(&mut x);
        x
    }
}

/// The `K` neighbors voting would score, in draw order.
pub fn sample_neighbors(x: &[f64], config: &VoteConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let mut sampler = NeighborSampler::new(x, config.sigma, config.seed)?;
    Ok((0..config.k_votes).map(|_| sampler.next_neighbor()).collect())
}

/// `s_vote = (f(x) + Σ_k f(x^k)) / (K + 1)`.
pub fn vote_score<S: Scorer + ?Sized>(scorer: &S, x_t: &[f64], config: &VoteConfig) -> Result<f64> {
    config.validate()?;
    let mut total = scorer.score(x_t)?;
    if config.sigma == 0.0 && x_t.iter().all(|v| (-1.0..=1.0).contains(v)) {
        // Every neighbor equals x_t; skip the K identical passes and the
        // rounding of summing them.
        return Ok(total);
    }
    let mut sampler = NeighborSampler::new(x_t, config.sigma, config.seed)?;
    for _ in 0..config.k_votes {
        total += scorer.score(&sampler.next_neighbor())?;
    }
    Ok(total / (config.k_votes + 1) as f64)
}

/// [`vote_score`] for a model and raw enrollment waveform.
pub fn vote_score_model(model: &AsvModel, x_t: &[f64], x_e: &[f64], config: &VoteConfig) -> Result<Score> {
    Ok(Score::new(vote_score(&model.trial_scorer(x_e)?, x_t, config)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Gaussian,
    Mean,
    Median,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Gaussian => "gaussian",
            FilterKind::Mean => "mean",
            FilterKind::Median => "median",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Some(FilterKind::Gaussian),
            "mean" => Some(FilterKind::Mean),
            "median" => Some(FilterKind::Median),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub kernel_size: usize,
    /// Kernel standard deviation in samples; gaussian only.
    pub gaussian_std: f64,
}

pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const DEFAULT_GAUSSIAN_STD: f64 = 1.0;

impl FilterSpec {
    pub fn new(kind: FilterKind, kernel_size: usize, gaussian_std: f64) -> Result<Self> {
        let s = Self {
            kind,
            kernel_size,
            gaussian_std,
        };
        s.validate()?;
        Ok(s)
    }

    /// Kernel 3, gaussian std 1 sample.
    pub fn default_for(kind: FilterKind) -> Self {
        Self {
            kind,
            kernel_size: DEFAULT_KERNEL_SIZE,
            gaussian_std: DEFAULT_GAUSSIAN_STD,
        }
    }

    pub fn defaults() -> [Self; 3] {
        [FilterKind::Gaussian, FilterKind::Mean, FilterKind::Median].map(Self::default_for)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "filter kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.kind == FilterKind::Gaussian && !(self.gaussian_std > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gaussian std must be positive, got {}",
                self.gaussian_std
            )));
        }
        Ok(())
    }

    /// Normalized kernel for the linear filters.
    pub fn kernel(&self) -> Vec<f64> {
        let k = self.kernel_size;
        match self.kind {
            FilterKind::Gaussian => {
                let half = (k / 2) as f64;
                let raw: Vec<f64> = (0..k)
                    .map(|i| {
                        let d = (i as f64 - half) / self.gaussian_std;
                        math::exp(-0.5 * d * d)
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|w| w / total).collect()
            }
            _ => vec![1.0 / k as f64; k],
        }
    }
}

/// Source index feeding window slot `j` of output `n` under replicate
/// padding.
fn source(n: usize, j: usize, half: usize, len: usize) -> usize {
    (n + j).saturating_sub(half).min(len - 1)
}

/// Index of the window median (middle of the stable value sort).
fn median_source(x: &[f64], n: usize, k: usize) -> usize {
    let half = k / 2;
    let mut window: Vec<usize> = (0..k).map(|j| source(n, j, half, x.len())).collect();
    window.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    window[half]
}

/// Sliding-window filter with replicate padding.
pub fn apply_filter(x: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidConfig("cannot filter an empty signal".into()));
    }
    let k = spec.kernel_size;
    let half = k / 2;
    Ok(match spec.kind {
        FilterKind::Median => (0..x.len()).map(|n| x[median_source(x, n, k)]).collect(),
        FilterKind::Mean => (0..x.len())
            .map(|n| {
                // centered form: exact on constant windows
                let c = x[n];
                let dev: f64 = (0..k).map(|j| x[source(n, j, half, x.len())] - c).sum();
                c + dev / k as f64
            })
            .collect(),
        FilterKind::Gaussian => {
            let w = spec.kernel();
            (0..x.len())
                .map(|n| {
                    let c = x[n];
                    c + w
                        .iter()
                        .enumerate()
                        .map(|(j, wj)| wj * (x[source(n, j, half, x.len())] - c))
                        .sum::<f64>()
                })
                .collect()
        }
    })
}

/// Vector-Jacobian product of [`apply_filter`] at `x`; the median routes
/// each output gradient to the selected sample.
pub fn filter_vjp(x: &[f64], spec: &FilterSpec, grad_out: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.is_empty() || grad_out.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "filter_vjp",
            lhs: vec![x.len()],
            rhs: vec![grad_out.len()],
        });
    }
    let k = spec.kernel_size;
    let half = k / 2;
    let mut g = vec![0.0; x.len()];
    match spec.kind {
        FilterKind::Median => {
            for (n, go) in grad_out.iter().enumerate() {
                g[median_source(x, n, k)] += go;
            }
        }
        _ => {
            let w = spec.kernel();
            for (n, go) in grad_out.iter().enumerate() {
                for (j, wj) in w.iter().enumerate() {
                    g[source(n, j, half, x.len())] += wj * go;
                }
            }
        }
    }
    Ok(g)
}

/// A scorer that filters its input first.
#[derive(Debug, Clone)]
pub struct FilteredScorer<'a, S: ?Sized> {
    pub inner: &'a S,
    pub spec: FilterSpec,
}

impl<S: Scorer + ?Sized> Scorer for FilteredScorer<'_, S> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.inner.score(&apply_filter(x, &self.spec)?)
    }

    fn score_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let y = apply_filter(x, &self.spec)?;
        let (s, gy) = self.inner.score_with_grad(&y)?;
        Ok((s, filter_vjp(x, &self.spec, &gy)?))
    }
}

impl core::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

