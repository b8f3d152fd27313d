//! Log-mel filterbank front-end.
//!
//! The whole map `waveform → log(mel · |DFT(window · frame)|² + floor)` is
//! built from tape ops, so gradients with respect to the waveform come for
//! free.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::autodiff::{Tape, Tensor, Var};
use crate::fft::Fft;
use crate::{math, Error, Result};

/// Front-end parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    /// 8 kHz, 25 ms Hamming window, 10 ms shift, 256-point DFT, 24 mel bands.
    fn default() -> Self {
        Self::from_durations(8000, 0.025, 0.010, 256, 24)
    }
}

impl FeatureConfig {
    /// Window and hop lengths derived from durations in seconds.
    pub fn from_durations(sample_rate: u32, win_secs: f64, hop_secs: f64, n_fft: usize, n_mels: usize) -> Self {
        let sr = f64::from(sample_rate);
        Self {
            sample_rate,
            win_length: math::round(sr * win_secs) as usize,
            hop_length: math::round(sr * hop_secs) as usize,
            n_fft,
            n_mels,
            log_floor: 1e-10,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        if len < self.win_length {
            return Err(Error::UtteranceTooShort {
                len,
                needed: self.win_length,
            });
        }
        Ok((len - self.win_length) / self.hop_length + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.win_length < 2 || self.win_length > self.n_fft {
            return bad(format!(
                "win_length {} must be in [2, n_fft = {}]",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 {
            return bad("hop_length must be ≥ 1".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be ≥ 1".into());
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }
}

/// Symmetric Hamming window `0.54 − 0.46·cos(2πi/(n−1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("hamming window needs n ≥ 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.54 - 0.46 * math::cos(2.0 * PI * i as f64 / denom))
        .collect())
}

/// Overlapping frames `[frames, win]`; frame `i` covers `[i·hop, i·hop + win)`.
pub fn frame_signal(waveform: &[f64], win_length: usize, hop_length: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(waveform.to_vec()));
    let frames = tape.frame_slice(x, win_length, hop_length, None)?;
    Ok(tape.value(frames).clone())
}

/// `|DFT(frame)[k]|²` for `k = 0..=n_fft/2`, zero-padding `frame` to `n_fft`.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, frame.len(), frame.to_vec())?);
    let p = tape.power_spectrum(x, n_fft)?;
    Ok(tape.value(p).data().to_vec())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * math::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (math::pow(10.0, mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank, `[n_mels, n_fft/2 + 1]`, spanning 0 Hz to
/// Nyquist without area normalization.
pub fn mel_filterbank(config: &FeatureConfig) -> Result<Tensor> {
    config.validate()?;
    let bins = config.n_bins();
    let sr = f64::from(config.sample_rate);
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut data = vec![0.0; config.n_mels * bins];
    for m in 0..config.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * sr / config.n_fft as f64;
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mel band {m} covers no DFT bin; lower n_mels or raise n_fft"
            )));
        }
    }
    Tensor::matrix(config.n_mels, bins, data)
}

/// How the power spectrum is put on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumRoute {
    /// Dedicated FFT op with an FFT-based backward pass.
    #[default]
    Fft,
    /// Two dense matmuls against cosine/sine bases, squared and summed.
    DenseDft,
}

/// Precomputed window, filterbank and transform for one [`FeatureConfig`].
#[derive(Debug, Clone)]
pub struct FrontEnd {
    config: FeatureConfig,
    window: Arc<[f64]>,
    mel_t: Tensor,
    fft: Arc<Fft>,
}

impl FrontEnd {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let window: Arc<[f64]> = Arc::from(hamming_window(config.win_length)?);
        let mel = mel_filterbank(&config)?;
        let (rows, cols) = (config.n_mels, config.n_bins());
        let mut mel_t = vec![0.0; rows * cols];
        for m in 0..rows {
            for k in 0..cols {
                mel_t[k * rows + m] = mel.data()[m * cols + k];
            }
        }
        let fft = Arc::new(Fft::new(config.n_fft));
        Ok(Self {
            window,
            mel_t: Tensor::matrix(cols, rows, mel_t)?,
            fft,
            config,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Log-mel features `[frames, n_mels]` of a rank-1 waveform node.
    pub fn fbank(&self, tape: &mut Tape, waveform: Var) -> Result<Var> {
        self.fbank_with_route(tape, waveform, SpectrumRoute::Fft)
    }

    pub fn fbank_with_route(&self, tape: &mut Tape, waveform: Var, route: SpectrumRoute) -> Result<Var> {
        let c = &self.config;
        let frames = tape.frame_slice(waveform, c.win_length, c.hop_length, Some(self.window.clone()))?;
        let power = match route {
            SpectrumRoute::Fft => tape.power_spectrum_with(frames, self.fft.clone())?,
            SpectrumRoute::DenseDft => {
                let (cos, sin) = self.dense_basis();
                let cos = tape.constant(cos);
                let sin = tape.constant(sin);
                let re = tape.matmul(frames, cos)?;
                let im = tape.matmul(frames, sin)?;
                let re2 = tape.square(re);
                let im2 = tape.square(im);
                tape.add(re2, im2)?
            }
        };
        let mel_t = tape.constant(self.mel_t.clone());
        let mel = tape.matmul(power, mel_t)?;
        Ok(tape.log(mel, c.log_floor))
    }

    /// `[win, bins]` cosine and (negated) sine DFT bases. Rows past `win`
    /// would only multiply zero padding, so they are omitted.
    fn dense_basis(&self) -> (Tensor, Tensor) {
        let (win, n, bins) = (self.config.win_length, self.config.n_fft, self.config.n_bins());
        let mut cos = Vec::with_capacity(win * bins);
        let mut sin = Vec::with_capacity(win * bins);
        for j in 0..win {
            for k in 0..bins {
                let theta = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                cos.push(math::cos(theta));
                sin.push(-math::sin(theta));
            }
        }
        (
            Tensor::from_parts_unchecked(vec![win, bins], cos),
            Tensor::from_parts_unchecked(vec![win, bins], sin),
        )
    }

    /// Plain evaluation of [`FrontEnd::fbank`].
    pub fn extract(&self, waveform: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(waveform.to_vec()));
        let f = self.fbank(&mut tape, x)?;
        Ok(tape.value(f).clone())
    }
}

/// Log-mel features `[frames, n_mels]` of `waveform`.
pub fn extract_fbank(waveform: &[f64], config: &FeatureConfig) -> Result<Tensor> {
    FrontEnd::new(config.clone())?.extract(waveform)
}
