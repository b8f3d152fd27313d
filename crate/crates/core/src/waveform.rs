use alloc::vec::Vec;

/// One step of 16-bit PCM in the float amplitude domain.
///
/// Attack budgets and vote noise are expressed in these units.
pub const AMPLITUDE_UNIT: f64 = 1.0 / 32768.0;

/// Mono audio in the float amplitude domain `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// L∞ distance in the float domain.
    pub fn linf_distance(&self, other: &[f64]) -> f64 {
        linf_distance(&self.samples, other)
    }
}

pub(crate) fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Clamp every sample into the valid audio range.
pub(crate) fn clip_to_range(samples: &mut [f64]) {
    for s in samples {
        *s = s.clamp(-1.0, 1.0);
    }
}
