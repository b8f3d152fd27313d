//! Trial partitions, EER threshold calibration and FAR/FRR.
//!
//! A trial is accepted when its score is `≥ τ`. FAR counts accepted
//! non-target trials, FRR counts rejected target trials.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::seed::rng_from_seed;
use crate::{math, Error, Result};

/// An (enrollment, test) pair of utterance indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Trial {
    pub trial_id: usize,
    pub enroll: usize,
    pub test: usize,
    pub is_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Dev,
    Eval,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Dev => "dev",
            Partition::Eval => "eval",
        }
    }
}

/// Trials with a dev/eval tag each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    trials: Vec<Trial>,
    partition: Vec<Partition>,
}

impl TrialSet {
    /// Both partitions must hold at least one target and one non-target.
    pub fn new(trials: Vec<Trial>, partition: Vec<Partition>) -> Result<Self> {
        if trials.len() != partition.len() {
            return Err(Error::InvalidPartition(format!(
                "{} trials but {} partition tags",
                trials.len(),
                partition.len()
            )));
        }
        let set = Self { trials, partition };
        for side in [Partition::Dev, Partition::Eval] {
            for target in [true, false] {
                if !set.in_partition(side).any(|t| t.is_target == target) {
                    return Err(Error::InvalidPartition(format!(
                        "{} side has no {} trial",
                        side.name(),
                        if target { "target" } else { "non-target" }
                    )));
                }
            }
        }
        Ok(set)
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trial, Partition)> {
        self.trials.iter().zip(self.partition.iter().copied())
    }

    pub fn in_partition(&self, side: Partition) -> impl Iterator<Item = &Trial> {
        self.iter().filter(move |(_, p)| *p == side).map(|(t, _)| t)
    }

    pub fn dev(&self) -> impl Iterator<Item = &Trial> {
        self.in_partition(Partition::Dev)
    }

    pub fn eval(&self) -> impl Iterator<Item = &Trial> {
        self.in_partition(Partition::Eval)
    }
}

/// Stratified random dev/eval split.
///
/// The dev side gets `round(dev_fraction · n)` trials (exact unless a side
/// would otherwise lose a trial type), split across targets and non-targets
/// in proportion.
pub fn split_trials(trials: Vec<Trial>, dev_fraction: f64, seed: u64) -> Result<TrialSet> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidPartition(format!("dev fraction {dev_fraction} is not in (0, 1)")));
    }
    let mut targets: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].is_target).collect();
    let mut nontargets: Vec<usize> = (0..trials.len()).filter(|&i| !trials[i].is_target).collect();
    let (nt, nn) = (targets.len(), nontargets.len());
    if nt < 2 || nn < 2 {
        return Err(Error::InvalidPartition(format!(
            "need ≥ 2 target and ≥ 2 non-target trials, got {nt} and {nn}"
        )));
    }
    let n_dev = math::round(dev_fraction * trials.len() as f64) as usize;
    let dev_t = (math::round(dev_fraction * nt as f64) as usize).clamp(1, nt - 1);
    let dev_n = n_dev.saturating_sub(dev_t).clamp(1, nn - 1);
    let mut rng = rng_from_seed(seed);
    targets.shuffle(&mut rng);
    nontargets.shuffle(&mut rng);
    let mut partition = alloc::vec![Partition::Eval; trials.len()];
    for &i in targets[..dev_t].iter().chain(&nontargets[..dev_n]) {
        partition[i] = Partition::Dev;
    }
    TrialSet::new(trials, partition)
}

fn check(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("score list contains NaN".into()));
    }
    Ok(())
}

/// Fraction of non-target scores with `s ≥ τ`.
pub fn far(nontarget_scores: &[f64], tau: f64) -> Result<f64> {
    check(nontarget_scores)?;
    Ok(nontarget_scores.iter().filter(|&&s| s >= tau).count() as f64 / nontarget_scores.len() as f64)
}

/// Fraction of target scores with `s < τ`.
pub fn frr(target_scores: &[f64], tau: f64) -> Result<f64> {
    check(target_scores)?;
    Ok(target_scores.iter().filter(|&&s| s < tau).count() as f64 / target_scores.len() as f64)
}

pub fn dev_far(nontarget_scores: &[f64], tau: f64) -> Result<f64> {
    far(nontarget_scores, tau)
}

pub fn dev_frr(target_scores: &[f64], tau: f64) -> Result<f64> {
    frr(target_scores, tau)
}

pub fn eval_far(nontarget_scores: &[f64], tau: f64) -> Result<f64> {
    far(nontarget_scores, tau)
}

pub fn eval_frr(target_scores: &[f64], tau: f64) -> Result<f64> {
    frr(target_scores, tau)
}

/// FAR over voted scores.
pub fn vote_far(vote_scores_nontarget: &[f64], tau: f64) -> Result<f64> {
    far(vote_scores_nontarget, tau)
}

/// FRR over voted scores.
pub fn vote_frr(vote_scores_target: &[f64], tau: f64) -> Result<f64> {
    frr(vote_scores_target, tau)
}

/// Calibrated operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub dev_far_at_tau: f64,
    pub dev_frr_at_tau: f64,
}

impl Threshold {
    pub fn eer(&self) -> f64 {
        (self.dev_far_at_tau + self.dev_frr_at_tau) / 2.0
    }
}

/// EER threshold over the midpoint candidate set.
///
/// Candidates are the midpoints between adjacent distinct scores plus one
/// point below the minimum and one above the maximum. The candidate with the
/// smallest `|FAR − FRR|` wins; ties go to the smaller `τ`.
pub fn calibrate_threshold(target_scores: &[f64], nontarget_scores: &[f64]) -> Result<Threshold> {
    check(target_scores)?;
    check(nontarget_scores)?;
    let sort = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let tgt = sort(target_scores);
    let ntgt = sort(nontarget_scores);
    let mut all: Vec<f64> = tgt.iter().chain(&ntgt).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(all[0] - 1.0);
    candidates.extend(all.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(all[all.len() - 1] + 1.0);

    let (n_t, n_n) = (tgt.len() as u128, ntgt.len() as u128);
    let mut best: Option<(u128, f64, u128, u128)> = None;
    for tau in candidates {
        let rejected = tgt.partition_point(|&s| s < tau) as u128;
        let accepted = n_n - ntgt.partition_point(|&s| s < tau) as u128;
        // |acc/n_n − rej/n_t| scaled by n_n·n_t, compared exactly
        let gap = (accepted * n_t).abs_diff(rejected * n_n);
        if best.is_none_or(|b| gap < b.0) {
            best = Some((gap, tau, accepted, rejected));
        }
    }
    let (_, tau, accepted, rejected) = best.expect("at least two candidates");
    Ok(Threshold {
        tau,
        dev_far_at_tau: accepted as f64 / n_n as f64,
        dev_frr_at_tau: rejected as f64 / n_t as f64,
    })
}

