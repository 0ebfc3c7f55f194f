//! Radix-2 FFT and frame periodograms.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_N_FFT: usize = 512;

/// Precomputed twiddle factors and bit-reversal table for one transform length.
///
/// Immutable after construction; share it across threads freely.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT length must be a power of two, got {n}"
            )));
        }
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform of a real frame, zero-padded up to the plan length.
    pub fn transform(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        if frame.len() > self.n {
            return Err(Error::InvalidArgument(format!(
                "frame of {} samples exceeds FFT length {}",
                frame.len(),
                self.n
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, &x) in frame.iter().enumerate() {
            buf[self.bitrev[i]] = Complex64::new(x, 0.0);
        }
        self.butterflies(&mut buf);
        Ok(buf)
    }

    fn butterflies(&self, buf: &mut [Complex64]) {
        let n = self.n;
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for block in buf.chunks_exact_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = self.twiddles[k * step] * *b;
                    *b = *a - t;
                    *a += t;
                }
            }
            half *= 2;
        }
    }

    pub fn periodogram(&self, frame: &[f64]) -> Result<Periodogram> {
        let spectrum = self.transform(frame)?;
        let scale = 1.0 / self.n as f64;
        let bins = spectrum[..=self.n / 2]
            .iter()
            .map(|c| c.norm_sqr() * scale)
            .collect();
        Ok(Periodogram {
            bins,
            n_fft: self.n,
        })
    }
}

/// One-sided power spectrum `|FFT|^2 / n_fft` over bins `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    bins: Vec<f64>,
    n_fft: usize,
}

impl Periodogram {
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Frequency spacing between bins.
    pub fn bin_hz(&self, sr: f64) -> f64 {
        sr / self.n_fft as f64
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            bins: self.bins.iter().map(|b| b * c).collect(),
            n_fft: self.n_fft,
        }
    }
}

pub fn fft(frame: &[f64], n_fft: usize) -> Result<Vec<Complex64>> {
    FftPlan::new(n_fft)?.transform(frame)
}

pub fn periodogram(frame: &[f64], n_fft: usize) -> Result<Periodogram> {
    FftPlan::new(n_fft)?.periodogram(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N^2) direct DFT, independent of the butterfly code path.
    fn dft(x: &[f64], n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                        Complex64::new(v * ang.cos(), v * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 512];
        x[0] = 1.0;
        let out = fft(&x, 512).unwrap();
        assert!(out.iter().all(|c| c.re == 1.0 && c.im == 0.0));
        let oracle = dft(&x, 512);
        assert!(max_rel_err(&out, &oracle) < 1e-12);
    }

    #[test]
    fn zero_frame_transforms_to_zero() {
        let out = fft(&[0.0; 300], 512).unwrap();
        assert!(out.iter().all(|c| c.norm() == 0.0));
        let p = periodogram(&[0.0; 300], 512).unwrap();
        assert!(p.bins().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn matches_direct_dft_on_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[8usize, 16, 64, 256, 512] {
            for len in [n / 2, n] {
                let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
                let err = max_rel_err(&fft(&x, n).unwrap(), &dft(&x, n));
                assert!(err < 1e-9, "n={n} len={len} err={err}");
            }
        }
    }

    #[test]
    fn impulse_periodogram_is_one_over_n() {
        let mut x = vec![0.0; 512];
        x[0] = 1.0;
        let p = periodogram(&x, 512).unwrap();
        assert_eq!(p.bins().len(), 257);
        let expected = dft(&x, 512)[0].norm_sqr() / 512.0;
        assert!((expected - 1.953125e-3).abs() < 1e-15);
        assert!(p.bins().iter().all(|&b| (b - expected).abs() < 1e-15));
    }

    #[test]
    fn dc_frame_concentrates_in_bin_zero() {
        let p = periodogram(&[1.0; 512], 512).unwrap();
        assert!((p.bins()[0] - 512.0).abs() < 1e-9);
        assert!(p.bins()[1..].iter().all(|&b| b.abs() < 1e-18));
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(fft(&[1.0; 10], 500).is_err());
        assert!(fft(&[1.0; 600], 512).is_err());
        assert!(FftPlan::new(0).is_err());
    }

    #[test]
    fn parseval_and_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let full = fft(&x, 512).unwrap();
        let energy: f64 = full.iter().map(|c| c.norm_sqr()).sum::<f64>() / 512.0;
        let time: f64 = x.iter().map(|v| v * v).sum();
        assert!(((energy - time) / time).abs() < 1e-9);

        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(
            periodogram(&x, 512).unwrap(),
            periodogram(&neg, 512).unwrap()
        );
    }
}
