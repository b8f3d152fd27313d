//! Synthetic speaker corpus.
//!
//! Each speaker is a harmonic source with a fixed pitch, harmonic profile and
//! formant resonances. Utterances add pitch jitter, vibrato, a syllabic
//! amplitude envelope with pauses and white background noise, then
//! peak-normalize to 0.5.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::metrics::Trial;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{math, Error, Result, Waveform};

pub const MIN_FUNDAMENTAL_HZ: f64 = 80.0;
pub const MAX_FUNDAMENTAL_HZ: f64 = 300.0;
/// Peak amplitude of every synthesized utterance.
pub const PEAK_AMPLITUDE: f64 = 0.5;
const N_HARMONIC_WEIGHTS: usize = 8;
pub const TILT_RANGE: (f64, f64) = (1.5, 2.5);
const MAX_HARMONICS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: usize,
    pub fundamental_freq: f64,
    /// Relative weights of the first harmonics; higher ones extend the last
    /// weight with an `h^-tilt` roll-off.
    pub harmonic_amplitudes: Vec<f64>,
    pub spectral_tilt: f64,
    pub formant_centers: Vec<f64>,
    pub formant_bandwidths: Vec<f64>,
    pub formant_gains: Vec<f64>,
    pub noise_level: f64,
}

impl SpeakerProfile {
    /// Amplitude of harmonic `h` (1-based) at frequency `freq`.
    fn harmonic_amplitude(&self, h: usize, freq: f64) -> f64 {
        let base = match self.harmonic_amplitudes.get(h - 1) {
            Some(a) => *a,
            None => {
                let last = self.harmonic_amplitudes.len();
                self.harmonic_amplitudes[last - 1] * math::pow(last as f64 / h as f64, self.spectral_tilt)
            }
        };
        let resonance: f64 = self
            .formant_centers
            .iter()
            .zip(&self.formant_bandwidths)
            .zip(&self.formant_gains)
            .map(|((c, bw), g)| {
                let d = (freq - c) / bw;
                g / (1.0 + d * d)
            })
            .sum();
        base * (1.0 + resonance)
    }

    /// Shaped harmonic amplitudes at the nominal pitch; the fundamental is
    /// kept the strongest partial.
    fn partials(&self, sample_rate: u32) -> Vec<f64> {
        let nyquist = f64::from(sample_rate) / 2.0;
        let count = ((0.9 * nyquist / self.fundamental_freq) as usize).clamp(1, MAX_HARMONICS);
        let mut amps: Vec<f64> = (1..=count)
            .map(|h| self.harmonic_amplitude(h, h as f64 * self.fundamental_freq))
            .collect();
        let cap = 0.8 * amps[0];
        for a in amps.iter_mut().skip(1) {
            *a = a.min(cap);
        }
        amps
    }
}

/// Deterministic speaker profile from a seed.
pub fn gen_speaker(speaker_id: usize, seed: u64) -> SpeakerProfile {
    let mut rng = rng_from_seed(seed);
    let fundamental_freq = rng.random_range(MIN_FUNDAMENTAL_HZ..=MAX_FUNDAMENTAL_HZ);
    let spectral_tilt = rng.random_range(TILT_RANGE.0..TILT_RANGE.1);
    let mut harmonic_amplitudes = Vec::with_capacity(N_HARMONIC_WEIGHTS);
    harmonic_amplitudes.push(1.0);
    for h in 2..=N_HARMONIC_WEIGHTS {
        let roll_off = math::pow(h as f64, -spectral_tilt);
        harmonic_amplitudes.push((rng.random_range(0.4..1.0) * roll_off).min(0.45));
    }
    let bands = [(250.0, 900.0), (900.0, 2300.0), (2300.0, 3500.0)];
    let formant_centers = bands.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
    let formant_bandwidths = bands.iter().map(|_| rng.random_range(80.0..250.0)).collect();
    let formant_gains = bands.iter().map(|_| rng.random_range(1.0..2.0)).collect();
    let noise_level = rng.random_range(0.0002..0.0006);
    SpeakerProfile {
        speaker_id,
        fundamental_freq,
        harmonic_amplitudes,
        spectral_tilt,
        formant_centers,
        formant_bandwidths,
        formant_gains,
        noise_level,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: usize,
    pub waveform: Waveform,
    pub duration: f64,
    pub seed: u64,
}

/// Voiced stretches of 150–400 ms separated by 50–200 ms pauses, with
/// 20 ms raised-cosine ramps. Pauses carry background noise only.
fn syllable_envelope<R: Rng>(n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let ramp = ((0.02 * sr) as usize).max(1);
    let mut env = vec![0.0; n];
    let mut pos = (rng.random_range(0.0..0.15) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.15..0.4) * sr) as usize;
        let level = rng.random_range(0.6..1.0);
        for (k, e) in env.iter_mut().skip(pos).take(len).enumerate() {
            let edge = k.min(len - 1 - k);
            *e = if edge < ramp {
                level * 0.5 * (1.0 - math::cos(PI * edge as f64 / ramp as f64))
            } else {
                level
            };
        }
        pos += len + (rng.random_range(0.05..0.2) * sr) as usize;
    }
    env
}

/// Per-take deviation of formants and harmonic weights; pitch is untouched.
fn vary<R: Rng>(profile: &SpeakerProfile, v: f64, rng: &mut R) -> SpeakerProfile {
    let mut p = profile.clone();
    if v <= 0.0 {
        return p;
    }
    for c in &mut p.formant_centers {
        *c *= 1.0 + rng.random_range(-v..v);
    }
    for g in &mut p.formant_gains {
        *g *= 1.0 + rng.random_range(-2.0 * v..2.0 * v);
    }
    for a in p.harmonic_amplitudes.iter_mut().skip(1) {
        *a = (*a * (1.0 + rng.random_range(-3.0 * v..3.0 * v))).max(0.0);
    }
    p
}

/// Render one utterance of `profile`.
pub fn synth_utterance(
    profile: &SpeakerProfile,
    utterance_id: String,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Utterance> {
    synth_utterance_varied(profile, utterance_id, duration, sample_rate, seed, TAKE_VARIATION, NOISE_SPREAD)
}

/// Default relative per-take deviation of formants and harmonic weights.
pub const TAKE_VARIATION: f64 = 0.2;
/// Default per-take background noise factor range, `exp(±NOISE_SPREAD)`.
pub const NOISE_SPREAD: f64 = 0.5;

/// [`synth_utterance`] with explicit take variation and noise spread.
pub fn synth_utterance_varied(
    profile: &SpeakerProfile,
    utterance_id: String,
    duration: f64,
    sample_rate: u32,
    seed: u64,
    variation: f64,
    noise_spread: f64,
) -> Result<Utterance> {
    if !(duration > 0.0) || sample_rate == 0 {
        return Err(Error::InvalidConfig(format!(
            "utterance duration must be positive, got {duration} s at {sample_rate} Hz"
        )));
    }
    let n = math::round(duration * f64::from(sample_rate)) as usize;
    if n == 0 {
        return Err(Error::InvalidConfig(format!("{duration} s is shorter than one sample")));
    }
    let mut rng = rng_from_seed(seed);
    let mut varied = vary(profile, variation, &mut rng);
    if noise_spread > 0.0 {
        varied.noise_level *= math::exp(rng.random_range(-noise_spread..noise_spread));
    }
    let profile = &varied;
    let pitch = profile.fundamental_freq * (1.0 + rng.random_range(-0.002..0.002));
    let vibrato_rate = rng.random_range(3.0..6.0);
    let vibrato_depth = rng.random_range(0.0..0.003);
    let envelope = syllable_envelope(n, f64::from(sample_rate), &mut rng);
    let phases: Vec<f64> = (0..MAX_HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let amps = profile.partials(sample_rate);
    let amp_total: f64 = amps.iter().sum();

    let sr = f64::from(sample_rate);
    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let inst = pitch * (1.0 + vibrato_depth * math::sin(2.0 * PI * vibrato_rate * t));
        phase += 2.0 * PI * inst / sr;
        let tone: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (a, p))| a * math::sin((h + 1) as f64 * phase + p))
            .sum::<f64>()
            / amp_total;
        let noise: f64 = StandardNormal.sample(&mut rng);
        samples.push(envelope[i] * tone + profile.noise_level * noise);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = PEAK_AMPLITUDE / peak;
        for s in &mut samples {
            *s *= g;
        }
    }
    Ok(Utterance {
        utterance_id,
        speaker_id: profile.speaker_id,
        waveform: Waveform::new(samples, sample_rate),
        duration: n as f64 / sr,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utterances_per_speaker: 10,
            duration_secs: 2.0,
            sample_rate: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerProfile>,
    /// Speaker-major order.
    pub utterances: Vec<Utterance>,
}

pub fn utterance_name(speaker: usize, index: usize) -> String {
    format!("spk{speaker:03}_utt{index:03}")
}

/// Generate all speakers and utterances from `global_seed`.
pub fn generate_corpus(config: &CorpusConfig, global_seed: u64) -> Result<Corpus> {
    let speakers: Vec<SpeakerProfile> = (0..config.n_speakers)
        .map(|s| gen_speaker(s, derive_seed(global_seed, s as u64, "speaker")))
        .collect();
    let mut utterances = Vec::with_capacity(config.n_speakers * config.utterances_per_speaker);
    for profile in &speakers {
        for u in 0..config.utterances_per_speaker {
            let index = (profile.speaker_id * config.utterances_per_speaker + u) as u64;
            utterances.push(synth_utterance(
                profile,
                utterance_name(profile.speaker_id, u),
                config.duration_secs,
                config.sample_rate,
                derive_seed(global_seed, index, "utterance"),
            )?);
        }
    }
    Ok(Corpus { speakers, utterances })
}

/// Sample `n_target` same-speaker and `n_nontarget` cross-speaker pairs
/// without repeating an unordered pair. Targets come first.
pub fn build_trials(utterances: &[Utterance], n_target: usize, n_nontarget: usize, seed: u64) -> Result<Vec<Trial>> {
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for i in 0..utterances.len() {
        for j in i + 1..utterances.len() {
            if utterances[i].speaker_id == utterances[j].speaker_id {
                same.push((i, j));
            } else {
                cross.push((i, j));
            }
        }
    }
    if same.len() < n_target || cross.len() < n_nontarget {
        return Err(Error::InsufficientUtterances {
            target_shortfall: n_target.saturating_sub(same.len()),
            nontarget_shortfall: n_nontarget.saturating_sub(cross.len()),
        });
    }
    let mut rng = rng_from_seed(seed);
    same.shuffle(&mut rng);
    cross.shuffle(&mut rng);
    let chosen = same[..n_target]
        .iter()
        .map(|p| (*p, true))
        .chain(cross[..n_nontarget].iter().map(|p| (*p, false)));
    Ok(chosen
        .enumerate()
        .map(|(trial_id, ((i, j), is_target))| {
            // Randomize which side enrolls so test utterances are not biased
            // toward later indices.
            let (enroll, test) = if rng.random::<bool>() { (i, j) } else { (j, i) };
            Trial {
                trial_id,
                enroll,
                test,
                is_target,
            }
        })
        .collect())
}

