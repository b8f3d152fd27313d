//! Complex DFT used by the power-spectrum op.
//!
//! Radix-2 iterative transform for power-of-two lengths, direct O(n²)
//! evaluation otherwise.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;

#[derive(Debug, Clone)]
pub(crate) struct Fft {
    n: usize,
    // e^{-2πij/n} for j in 0..n
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Option<Vec<usize>>,
}

impl Fft {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n >= 1, "fft length must be positive");
        let (cos, sin) = (0..n)
            .map(|j| {
                let theta = 2.0 * PI * j as f64 / n as f64;
                (math::cos(theta), -math::sin(theta))
            })
            .unzip();
        let bitrev = n.is_power_of_two().then(|| {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        });
        Self { n, cos, sin, bitrev }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// In-place `X_k = Σ x_j e^{-2πijk/n}`.
    pub(crate) fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        debug_assert_eq!(re.len(), self.n);
        debug_assert_eq!(im.len(), self.n);
        match &self.bitrev {
            Some(bitrev) => self.radix2(re, im, bitrev),
            None => self.direct(re, im),
        }
    }

    /// In-place unnormalized inverse, `x_j = Σ X_k e^{+2πijk/n}`.
    pub(crate) fn inverse_unnormalized(&self, re: &mut [f64], im: &mut [f64]) {
        for v in im.iter_mut() {
            *v = -*v;
        }
        self.forward(re, im);
        for v in im.iter_mut() {
            *v = -*v;
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64], bitrev: &[usize]) {
        let n = self.n;
        for (i, &j) in bitrev.iter().enumerate() {
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let wr = self.cos[j * stride];
                    let wi = self.sin[j * stride];
                    let a = start + j;
                    let b = a + half;
                    let tr = wr * re[b] - wi * im[b];
                    let ti = wr * im[b] + wi * re[b];
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut out_re = alloc::vec![0.0; n];
        let mut out_im = alloc::vec![0.0; n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for j in 0..n {
                let idx = (j * k) % n;
                let (wr, wi) = (self.cos[idx], self.sin[idx]);
                sr += re[j] * wr - im[j] * wi;
                si += re[j] * wi + im[j] * wr;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}
