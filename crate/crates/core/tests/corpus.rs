use std::collections::BTreeSet;
use std::vec::Vec;
use core::f64::consts::PI;

use asv_vote_core::corpus::*;
use asv_vote_core::*;
use asv_vote_core::features::power_spectrum;

/// Brute-force DFT magnitude peak on a fine frequency grid.
fn dominant_frequency(x: &[f64], sr: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let mut best = (0.0, lo);
    let mut f = lo;
    while f <= hi {
        let w = 2.0 * PI * f / sr;
        let (step_re, step_im) = (w.cos(), -w.sin());
        let (mut c, mut s) = (1.0, 0.0);
        let (mut re, mut im) = (0.0, 0.0);
        for v in x {
            re += v * c;
            im += v * s;
            (c, s) = (c * step_re - s * step_im, c * step_im + s * step_re);
        }
        let mag = re * re + im * im;
        if mag > best.0 {
            best = (mag, f);
        }
        f += step;
    }
    best.1
}

fn average_spectrum(x: &[f64]) -> Vec<f64> {
    let mut acc = std::vec![0.0; 129];
    let mut count = 0.0;
    for start in (0..x.len() - 256).step_by(128) {
        for (a, p) in acc.iter_mut().zip(power_spectrum(&x[start..start + 256], 256).unwrap()) {
            *a += p;
        }
        count += 1.0;
    }
    acc.iter().map(|a| a / count).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn speaker_generation_is_deterministic_and_bounded() {
    assert_eq!(gen_speaker(0, 42), gen_speaker(0, 42));
    for seed in 0..1000u64 {
        let p = gen_speaker(0, seed);
        assert!((MIN_FUNDAMENTAL_HZ..=MAX_FUNDAMENTAL_HZ).contains(&p.fundamental_freq));
        assert!(p.harmonic_amplitudes.len() >= 4);
        assert!(p.harmonic_amplitudes.iter().all(|a| *a >= 0.0));
        assert!(p.harmonic_amplitudes.iter().any(|a| *a > 0.0));
        assert!((2..=3).contains(&p.formant_centers.len()));
        assert_ne!(p, gen_speaker(0, seed + 1000));
    }
}

#[test]
fn utterances_are_deterministic_and_peak_normalized() {
    let p = gen_speaker(3, 9);
    let a = synth_utterance(&p, "a".into(), 0.5, 8000, 1).unwrap();
    let b = synth_utterance(&p, "a".into(), 0.5, 8000, 1).unwrap();
    assert_eq!(a, b);
    let peak = a.waveform.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    assert!((peak - 0.5).abs() < 1e-9);
    assert_eq!(a.waveform.len(), 4000);
    assert_eq!(a.duration, 0.5);
    assert!(synth_utterance(&p, "z".into(), 0.0, 8000, 1).is_err());
    assert!(synth_utterance(&p, "z".into(), -1.0, 8000, 1).is_err());
}

#[test]
fn two_takes_share_the_fundamental() {
    for speaker_seed in [5u64, 17, 23] {
        let p = gen_speaker(0, speaker_seed);
        let a = synth_utterance(&p, "a".into(), 2.0, 8000, 100).unwrap();
        let b = synth_utterance(&p, "b".into(), 2.0, 8000, 200).unwrap();
        assert!(a.waveform.linf_distance(&b.waveform.samples) > 0.01);
        let fa = dominant_frequency(&a.waveform.samples, 8000.0, 40.0, 3800.0, 0.5);
        let fb = dominant_frequency(&b.waveform.samples, 8000.0, 40.0, 3800.0, 0.5);
        assert!((fa - fb).abs() <= 2.0, "{fa} vs {fb}");
        assert!((fa - p.fundamental_freq).abs() <= 2.0, "{fa} vs f0 {}", p.fundamental_freq);
    }
}

#[test]
fn corpus_is_reproducible() {
    let config = CorpusConfig {
        n_speakers: 3,
        utterances_per_speaker: 2,
        duration_secs: 0.1,
        sample_rate: 8000,
    };
    let a = generate_corpus(&config, 5).unwrap();
    assert_eq!(a, generate_corpus(&config, 5).unwrap());
    assert_ne!(a, generate_corpus(&config, 6).unwrap());
    assert_eq!(a.utterances.len(), 6);
    assert_eq!(a.utterances[3].utterance_id, "spk001_utt001");
    assert_eq!(a.utterances[3].speaker_id, 1);
}

#[test]
fn within_speaker_spectra_are_closer() {
    let config = CorpusConfig {
        n_speakers: 6,
        utterances_per_speaker: 3,
        duration_secs: 0.5,
        sample_rate: 8000,
    };
    let corpus = generate_corpus(&config, 77).unwrap();
    let spectra: Vec<Vec<f64>> = corpus.utterances.iter().map(|u| average_spectrum(&u.waveform.samples)).collect();
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..spectra.len() {
        for j in i + 1..spectra.len() {
            let c = cos(&spectra[i], &spectra[j]);
            if corpus.utterances[i].speaker_id == corpus.utterances[j].speaker_id {
                same += c;
                ns += 1.0;
            } else {
                diff += c;
                nd += 1.0;
            }
        }
    }
    let (same, diff) = (same / ns, diff / nd);
    assert!(same - diff > 0.3, "within {same}, across {diff}");
}

fn small_corpus() -> Vec<Utterance> {
    let config = CorpusConfig {
        n_speakers: 4,
        utterances_per_speaker: 3,
        duration_secs: 0.05,
        sample_rate: 8000,
    };
    generate_corpus(&config, 1).unwrap().utterances
}

#[test]
fn trial_labels_are_exact() {
    let utts = small_corpus();
    // 4 speakers × C(3,2) = 12 target pairs, C(12,2) − 12 = 54 cross pairs
    let trials = build_trials(&utts, 12, 54, 3).unwrap();
    assert_eq!(trials.iter().filter(|t| t.is_target).count(), 12);
    assert_eq!(trials.iter().filter(|t| !t.is_target).count(), 54);
    let mut pairs = BTreeSet::new();
    for t in &trials {
        assert_ne!(t.enroll, t.test);
        let same = utts[t.enroll].speaker_id == utts[t.test].speaker_id;
        assert_eq!(same, t.is_target);
        assert!(pairs.insert((t.enroll.min(t.test), t.enroll.max(t.test))));
    }
    assert_eq!(trials, build_trials(&utts, 12, 54, 3).unwrap());
    let ids: Vec<usize> = trials.iter().map(|t| t.trial_id).collect();
    assert_eq!(ids, (0..66).collect::<Vec<_>>());
}

#[test]
fn trial_shortfall_is_reported() {
    let utts = small_corpus();
    assert_eq!(
        build_trials(&utts, 13, 60, 0).unwrap_err(),
        Error::InsufficientUtterances {
            target_shortfall: 1,
            nontarget_shortfall: 6
        }
    );
    let singles: Vec<Utterance> = utts.into_iter().step_by(3).collect();
    assert!(matches!(
        build_trials(&singles, 1, 1, 0),
        Err(Error::InsufficientUtterances { target_shortfall: 1, .. })
    ));
}
