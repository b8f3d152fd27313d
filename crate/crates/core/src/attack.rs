//! BIM (iterative sign-gradient) attacks.
//!
//! Every variant runs `x ← clip_[-1,1](Clip_ε^{x_t}(x + α·λ·sign(∇f)))` for
//! `N` iterations, with `λ = +1` on non-target trials and `−1` on target
//! trials. The variants differ only in the function whose gradient is
//! followed: the bare scorer, the scorer behind a filter, or the mean over
//! fresh Gaussian neighbors (the attacker's own draws).

use alloc::format;
use core::cell::Cell;
use alloc::vec::Vec;

use crate::defense::{FilterSpec, FilteredScorer, NeighborSampler, VoteConfig};
use crate::model::{Score, Scorer};
use crate::waveform::linf_distance;
use crate::{math, Error, Result, AMPLITUDE_UNIT};

/// Iterations used throughout unless configured otherwise.
pub const DEFAULT_N_ITERS: usize = 5;
/// Perturbation budgets swept, in amplitude units.
pub const EPSILON_SWEEP: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Knowledge {
    /// Gradients of the undefended model only.
    Limited,
    /// Differentiates through voting with its own noise draws.
    PerfectVsVoting { k_votes: usize, sigma: f64 },
    /// Differentiates through a filter baseline.
    PerfectVsFilter(FilterSpec),
}

impl Knowledge {
    pub fn name(&self) -> &'static str {
        match self {
            Knowledge::Limited => "limited",
            Knowledge::PerfectVsVoting { .. } => "perfect_vs_voting",
            Knowledge::PerfectVsFilter(_) => "perfect_vs_filter",
        }
    }

    /// Forward-backward passes per iteration.
    pub fn passes_per_iteration(&self) -> usize {
        match self {
            Knowledge::PerfectVsVoting { k_votes, .. } => k_votes + 1,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// L∞ budget in amplitude units.
    pub epsilon: f64,
    pub n_iters: usize,
    /// Step size in amplitude units.
    pub step_alpha: f64,
    pub knowledge: Knowledge,
    /// Seed for the attacker's own noise draws.
    pub seed: u64,
}

impl AttackConfig {
    /// Limited-knowledge config with `α = ε / N`.
    pub fn new(epsilon: f64, n_iters: usize) -> Result<Self> {
        let c = Self {
            epsilon,
            n_iters,
            step_alpha: if n_iters == 0 { 0.0 } else { epsilon / n_iters as f64 },
            knowledge: Knowledge::Limited,
            seed: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_knowledge(self, knowledge: Knowledge) -> Self {
        Self { knowledge, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be ≥ 0, got {}", self.epsilon)));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidConfig("attack needs at least one iteration".into()));
        }
        if self.epsilon > 0.0 && !(self.step_alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive when epsilon > 0, got {}",
                self.step_alpha
            )));
        }
        match self.knowledge {
            Knowledge::PerfectVsVoting { sigma, .. } if !(sigma >= 0.0) => {
                Err(Error::InvalidConfig(format!("sigma must be ≥ 0, got {sigma}")))
            }
            Knowledge::PerfectVsFilter(spec) => spec.validate(),
            _ => Ok(()),
        }
    }

    pub fn budget(&self) -> usize {
        self.n_iters * self.knowledge.passes_per_iteration()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult {
    pub x_adv: Vec<f64>,
    /// `‖x_adv − x_t‖∞` in amplitude units.
    pub linf_distance: f64,
    pub score_before: Score,
    pub score_after: Score,
    pub forward_backward_count: usize,
}

/// `λ`: raise the score of non-target trials, lower it on target trials.
pub fn direction(is_target: bool) -> f64 {
    if is_target {
        -1.0
    } else {
        1.0
    }
}

/// Mean score over the input and `K` fresh neighbors per call.
struct ExpectedScorer<'a, S: ?Sized> {
    inner: &'a S,
    k_votes: usize,
    sampler: NeighborSampler<'a>,
}

impl<S: Scorer + ?Sized> ExpectedScorer<'_, S> {
    /// Gradient of the mean at `x`; the sampler's center is `x_t`, so the
    /// drawn offsets are re-centered on `x`.
    fn gradient(&mut self, x: &[f64], center: &[f64]) -> Result<Vec<f64>> {
        let (_, mut total) = self.inner.score_with_grad(x)?;
        for _ in 0..self.k_votes {
            let draw = self.sampler.next_neighbor();
            let mut neighbor: Vec<f64> = x.iter().zip(&draw).zip(center).map(|((x, d), c)| x + (d - c)).collect();
            let mut inside: Vec<bool> = Vec::with_capacity(neighbor.len());
            for v in &mut neighbor {
                inside.push((-1.0..=1.0).contains(v));
                *v = v.clamp(-1.0, 1.0);
            }
            let (_, g) = self.inner.score_with_grad(&neighbor)?;
            for ((t, g), ok) in total.iter_mut().zip(g).zip(inside) {
                if ok {
                    *t += g;
                }
            }
        }
        let n = (self.k_votes + 1) as f64;
        for t in &mut total {
            *t /= n;
        }
        Ok(total)
    }
}

/// Counts forward-backward passes through the wrapped scorer.
struct Counting<'a, S: ?Sized> {
    inner: &'a S,
    passes: Cell<usize>,
}

impl<S: Scorer + ?Sized> Scorer for Counting<'_, S> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.inner.score(x)
    }

    fn score_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.passes.set(self.passes.get() + 1);
        self.inner.score_with_grad(x)
    }
}

enum Target<'a, S: ?Sized> {
    Plain(&'a S),
    Filtered(FilteredScorer<'a, S>),
    Expected(ExpectedScorer<'a, S>),
}

/// Run the attack selected by `config.knowledge`, calling `observe` with
/// every iterate.
pub fn attack_with_observer<S, F>(scorer: &S, x_t: &[f64], is_target: bool, config: &AttackConfig, mut observe: F) -> Result<AdversarialResult>
where
    S: Scorer + ?Sized,
    F: FnMut(usize, &[f64]),
{
    config.validate()?;
    let score_before = scorer.score(x_t)?;
    let lambda = direction(is_target);
    let eps = config.epsilon * AMPLITUDE_UNIT;
    let alpha = config.step_alpha * AMPLITUDE_UNIT;

    let counting = Counting {
        inner: scorer,
        passes: Cell::new(0),
    };
    let mut target = match config.knowledge {
        Knowledge::Limited => Target::Plain(&counting),
        Knowledge::PerfectVsFilter(spec) => Target::Filtered(FilteredScorer { inner: &counting, spec }),
        Knowledge::PerfectVsVoting { k_votes, sigma } => Target::Expected(ExpectedScorer {
            inner: &counting,
            k_votes,
            sampler: NeighborSampler::new(x_t, sigma, config.seed)?,
        }),
    };

    let mut x = x_t.to_vec();
    for iteration in 0..config.n_iters {
        let grad = match &mut target {
            Target::Plain(s) => s.score_with_grad(&x)?.1,
            Target::Filtered(f) => f.score_with_grad(&x)?.1,
            Target::Expected(e) => e.gradient(&x, x_t)?,
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration });
        }
        for ((v, g), c) in x.iter_mut().zip(&grad).zip(x_t) {
            let stepped = *v + alpha * lambda * math::sign(*g);
            *v = stepped.clamp(c - eps, c + eps).clamp(-1.0, 1.0);
        }
        observe(iteration, &x);
    }
    Ok(AdversarialResult {
        linf_distance: linf_distance(&x, x_t) / AMPLITUDE_UNIT,
        score_after: Score::new(scorer.score(&x)?),
        score_before: Score::new(score_before),
        forward_backward_count: counting.passes.get(),
        x_adv: x,
    })
}

/// Run the attack selected by `config.knowledge`.
pub fn run_attack<S: Scorer + ?Sized>(scorer: &S, x_t: &[f64], is_target: bool, config: &AttackConfig) -> Result<AdversarialResult> {
    attack_with_observer(scorer, x_t, is_target, config, |_, _| {})
}

/// Limited-knowledge BIM against the bare scorer.
pub fn bim<S: Scorer + ?Sized>(scorer: &S, x_t: &[f64], is_target: bool, config: &AttackConfig) -> Result<AdversarialResult> {
    run_attack(scorer, x_t, is_target, &config.with_knowledge(Knowledge::Limited))
}

/// BIM on the mean score over `K` fresh neighbors per iteration.
pub fn bim_adaptive_vs_voting<S: Scorer + ?Sized>(
    scorer: &S,
    x_t: &[f64],
    is_target: bool,
    config: &AttackConfig,
    vote: &VoteConfig,
) -> Result<AdversarialResult> {
    let knowledge = Knowledge::PerfectVsVoting {
        k_votes: vote.k_votes,
        sigma: vote.sigma,
    };
    run_attack(scorer, x_t, is_target, &config.with_knowledge(knowledge))
}

/// BIM through a filter front of the scorer.
pub fn bim_vs_filter<S: Scorer + ?Sized>(
    scorer: &S,
    filter: &FilterSpec,
    x_t: &[f64],
    is_target: bool,
    config: &AttackConfig,
) -> Result<AdversarialResult> {
    run_attack(scorer, x_t, is_target, &config.with_knowledge(Knowledge::PerfectVsFilter(*filter)))
}

