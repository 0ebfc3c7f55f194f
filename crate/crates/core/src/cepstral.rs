//! Mel scale, triangular filter banks, MFB log-energies and MFCCs.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{frame_signal_with, AccelRecord, FrameConfig};
use crate::spectral::{FftPlan, Periodogram, DEFAULT_N_FFT};

/// Energy floor applied before the logarithm so silent frames stay bounded.
pub const ENERGY_FLOOR: f64 = 1e-12;

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) || !f.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "frequency must be finite and non-negative, got {f} Hz"
        )));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mel value must be finite and non-negative, got {m}"
        )));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Ten,
    Natural,
}

impl LogBase {
    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::Natural => x.ln(),
        }
    }
}

/// `n_fl` triangular filters over the `n_fft/2 + 1` periodogram bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    weights: Array2<f64>,
    sr: f64,
    n_fft: usize,
    mel_points: Vec<f64>,
    bin_points: Vec<usize>,
}

impl FilterBank {
    /// Anchors are `n_fl + 2` points equally spaced in mel between 0 and `mel(sr/2)`,
    /// snapped to FFT bin `floor((n_fft + 1) * hz / sr)`.
    pub fn new(sr: f64, n_fl: usize, n_fft: usize) -> Result<Self> {
        if n_fl == 0 {
            return Err(Error::InvalidArgument("filter count must be at least 1".into()));
        }
        if n_fft == 0 || !n_fft.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT length must be a power of two, got {n_fft}"
            )));
        }
        if !(sr.is_finite() && sr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must be positive, got {sr}"
            )));
        }
        let mel_max = hz_to_mel(sr / 2.0)?;
        let mel_points: Vec<f64> = (0..n_fl + 2)
            .map(|j| j as f64 * mel_max / (n_fl + 1) as f64)
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_points = mel_points
            .iter()
            .map(|&m| {
                let hz = mel_to_hz(m)?;
                let bin = ((n_fft + 1) as f64 * hz / sr).floor() as usize;
                Ok(bin.min(n_bins - 1))
            })
            .collect::<Result<Vec<usize>>>()?;

        for j in 1..bin_points.len() {
            if bin_points[j] == bin_points[j - 1] {
                // anchors j-1 and j are the edges/peaks of filters j-1 and j (1-based)
                return Err(Error::FilterCollision {
                    first: j - 1,
                    second: j,
                    bin: bin_points[j],
                    sr,
                    n_fl,
                    n_fft,
                });
            }
        }

        let mut weights = Array2::zeros((n_fl, n_bins));
        for (k, mut row) in weights.axis_iter_mut(Axis(0)).enumerate() {
            let (left, center, right) = (bin_points[k], bin_points[k + 1], bin_points[k + 2]);
            for i in left..center {
                row[i] = (i - left) as f64 / (center - left) as f64;
            }
            row[center] = 1.0;
            for i in center + 1..right {
                row[i] = (right - i) as f64 / (right - center) as f64;
            }
        }

        Ok(Self {
            weights,
            sr,
            n_fft,
            mel_points,
            bin_points,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.weights.row(k)
    }

    pub fn n_fl(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn sr(&self) -> f64 {
        self.sr
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn mel_points(&self) -> &[f64] {
        &self.mel_points
    }

    pub fn bin_points(&self) -> &[usize] {
        &self.bin_points
    }
}

pub fn build_filterbank(sr: f64, n_fl: usize, n_fft: usize) -> Result<FilterBank> {
    FilterBank::new(sr, n_fl, n_fft)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CepstralKind {
    Mfb,
    Mfcc,
}

/// Time-feature matrix, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CepstralTensor {
    values: Array2<f64>,
    kind: CepstralKind,
}

impl CepstralTensor {
    pub fn new(values: Array2<f64>, kind: CepstralKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                location: format!("{kind:?} tensor"),
            });
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> CepstralKind {
        self.kind
    }

    pub fn n_w(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_keep(&self) -> usize {
        self.values.ncols()
    }
}

/// Log filter-bank energies, keeping the first `n_keep` filters.
pub fn mfb(periodograms: &[Periodogram], fb: &FilterBank, n_keep: usize) -> Result<CepstralTensor> {
    mfb_with_base(periodograms, fb, n_keep, LogBase::Ten)
}

pub fn mfb_with_base(
    periodograms: &[Periodogram],
    fb: &FilterBank,
    n_keep: usize,
    base: LogBase,
) -> Result<CepstralTensor> {
    if n_keep == 0 || n_keep > fb.n_fl() {
        return Err(Error::InvalidArgument(format!(
            "n_keep must be in 1..={}, got {n_keep}",
            fb.n_fl()
        )));
    }
    let mut values = Array2::zeros((periodograms.len(), n_keep));
    for (t, p) in periodograms.iter().enumerate() {
        if p.bins().len() != fb.n_bins() {
            return Err(Error::ShapeMismatch(format!(
                "periodogram {t} has {} bins, filter bank expects {}",
                p.bins().len(),
                fb.n_bins()
            )));
        }
        let spectrum = ArrayView1::from(p.bins());
        for k in 0..n_keep {
            let energy = fb.row(k).dot(&spectrum);
            values[[t, k]] = base.apply(energy.max(ENERGY_FLOOR));
        }
    }
    CepstralTensor::new(values, CepstralKind::Mfb)
}

fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Orthonormal DCT-II of one row.
pub fn dct_ii(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    (0..n)
        .map(|k| {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(i, &m)| m * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .sum();
            dct_scale(k, n) * s
        })
        .collect()
}

/// Inverse of [`dct_ii`] (orthonormal DCT-III).
pub fn idct_ii(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    (0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    dct_scale(k, n) * c * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
                })
                .sum()
        })
        .collect()
}

pub fn dct_mfcc(mfb_tensor: &CepstralTensor) -> Result<CepstralTensor> {
    if mfb_tensor.kind != CepstralKind::Mfb {
        return Err(Error::InvalidArgument(
            "MFCC extraction requires an MFB tensor".into(),
        ));
    }
    let mut values = mfb_tensor.values.clone();
    for mut row in values.axis_iter_mut(Axis(0)) {
        let coeffs = dct_ii(&row.to_vec());
        row.iter_mut().zip(coeffs).for_each(|(dst, c)| *dst = c);
    }
    CepstralTensor::new(values, CepstralKind::Mfcc)
}

/// Framing, spectral and filter-bank settings for one extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepstralConfig {
    pub frame: FrameConfig,
    pub n_fft: usize,
    pub n_fl: usize,
    pub n_keep: usize,
    pub log_base: LogBase,
}

impl Default for CepstralConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            n_fft: DEFAULT_N_FFT,
            n_fl: 26,
            n_keep: 8,
            log_base: LogBase::Ten,
        }
    }
}

/// Reusable extraction pipeline for records sharing one sampling rate.
#[derive(Debug, Clone)]
pub struct CepstralExtractor {
    cfg: CepstralConfig,
    plan: FftPlan,
    bank: FilterBank,
}

impl CepstralExtractor {
    pub fn new(sr: f64, cfg: CepstralConfig) -> Result<Self> {
        let plan = FftPlan::new(cfg.n_fft)?;
        let bank = FilterBank::new(sr, cfg.n_fl, cfg.n_fft)?;
        Ok(Self { cfg, plan, bank })
    }

    pub fn filter_bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn config(&self) -> &CepstralConfig {
        &self.cfg
    }

    pub fn periodograms(&self, rec: &AccelRecord) -> Result<Vec<Periodogram>> {
        if (rec.sr() - self.bank.sr()).abs() > 1e-9 * self.bank.sr() {
            return Err(Error::ShapeMismatch(format!(
                "record sampled at {} Hz, filter bank built for {} Hz",
                rec.sr(),
                self.bank.sr()
            )));
        }
        let frames = frame_signal_with(rec, &self.cfg.frame)?;
        frames
            .frames()
            .iter()
            .map(|f| self.plan.periodogram(f))
            .collect()
    }

    pub fn extract(&self, rec: &AccelRecord, kind: CepstralKind) -> Result<CepstralTensor> {
        let p = self.periodograms(rec)?;
        let bank_energies = mfb_with_base(&p, &self.bank, self.cfg.n_keep, self.cfg.log_base)?;
        match kind {
            CepstralKind::Mfb => Ok(bank_energies),
            CepstralKind::Mfcc => dct_mfcc(&bank_energies),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::periodogram;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn mel_point_values() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        let m700 = hz_to_mel(700.0).unwrap();
        assert!((m700 - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((m700 - 781.17).abs() < 0.01);
        let m250 = hz_to_mel(250.0).unwrap();
        assert!((m250 - 2595.0 * (1.0 + 250.0 / 700.0f64).log10()).abs() < 1e-12);
        assert_eq!(mel_to_hz(0.0).unwrap(), 0.0);
        for x in [1.0, 25.0, 250.0] {
            assert!(rel(mel_to_hz(hz_to_mel(x).unwrap()).unwrap(), x) < 1e-9);
        }
        assert!(rel(hz_to_mel(mel_to_hz(100.0).unwrap()).unwrap(), 100.0) < 1e-9);
    }

    #[test]
    fn mel_rejects_negative() {
        assert!(hz_to_mel(-1.0).is_err());
        assert!(mel_to_hz(-0.5).is_err());
        assert!(hz_to_mel(f64::NAN).is_err());
    }

    #[test]
    fn single_filter_peaks_mid_range() {
        let fb = FilterBank::new(100.0, 1, 512).unwrap();
        assert_eq!(fb.n_fl(), 1);
        let row = fb.row(0);
        assert_eq!(row.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        let mid_mel = hz_to_mel(50.0).unwrap() / 2.0;
        assert!((fb.mel_points()[1] - mid_mel).abs() < 1e-12);
        let peak_bin = row.iter().position(|&w| w == 1.0).unwrap();
        assert_eq!(peak_bin, fb.bin_points()[1]);
    }

    #[test]
    fn anchors_equally_spaced_in_mel() {
        let fb = FilterBank::new(100.0, 8, 512).unwrap();
        let m = fb.mel_points();
        assert_eq!(m.len(), 10);
        let top = 2595.0 * (1.0 + 50.0 / 700.0f64).log10();
        assert!((m[9] - top).abs() < 1e-9);
        let gap = top / 9.0;
        for w in m.windows(2) {
            assert!((w[1] - w[0] - gap).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_are_unimodal_triangles() {
        let fb = FilterBank::new(100.0, 26, 512).unwrap();
        for k in 0..fb.n_fl() {
            let row = fb.row(k);
            let center = fb.bin_points()[k + 1];
            assert_eq!(row[center], 1.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            for i in 1..=center {
                assert!(row[i] >= row[i - 1]);
            }
            for i in center + 1..row.len() {
                assert!(row[i] <= row[i - 1]);
            }
            let (l, r) = (fb.bin_points()[k], fb.bin_points()[k + 2]);
            assert!(row.iter().enumerate().all(|(i, &w)| w == 0.0 || (i > l && i < r)));
        }
    }

    #[test]
    fn collision_is_reported() {
        // 128 filters cannot fit in the 17 bins of a 32-point FFT.
        match FilterBank::new(100.0, 128, 32) {
            Err(Error::FilterCollision { first, second, .. }) => assert_eq!(second, first + 1),
            other => panic!("expected collision, got {other:?}"),
        }
        assert!(FilterBank::new(100.0, 0, 512).is_err());
        assert!(FilterBank::new(100.0, 8, 500).is_err());
    }

    #[test]
    fn zero_frame_hits_floor() {
        let fb = FilterBank::new(100.0, 26, 512).unwrap();
        let p = periodogram(&[0.0; 100], 512).unwrap();
        let t = mfb(&[p], &fb, 8).unwrap();
        assert!(t.values().iter().all(|&v| v == -12.0));
    }

    #[test]
    fn impulse_frame_matches_row_sums() {
        let fb = FilterBank::new(100.0, 26, 512).unwrap();
        let mut x = vec![0.0; 100];
        x[0] = 1.0;
        let p = periodogram(&x, 512).unwrap();
        let t = mfb(&[p], &fb, 8).unwrap();
        for k in 0..8 {
            let mut row_sum = 0.0;
            for i in 0..fb.n_bins() {
                row_sum += fb.weights()[[k, i]];
            }
            let expected = (row_sum / 512.0).log10();
            assert!((t.values()[[0, k]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_scaling_shifts_mfb_by_two() {
        let fb = FilterBank::new(100.0, 26, 512).unwrap();
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        let x10: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let a = mfb(&[periodogram(&x, 512).unwrap()], &fb, 8).unwrap();
        let b = mfb(&[periodogram(&x10, 512).unwrap()], &fb, 8).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((v - u - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mfb_rejects_bad_shapes() {
        let fb = FilterBank::new(100.0, 8, 512).unwrap();
        let p = periodogram(&[1.0; 10], 256).unwrap();
        assert!(matches!(mfb(&[p.clone()], &fb, 8), Err(Error::ShapeMismatch(_))));
        let p = periodogram(&[1.0; 10], 512).unwrap();
        assert!(mfb(&[p], &fb, 9).is_err());
    }

    #[test]
    fn dct_of_constant_row() {
        let c = dct_ii(&[1.0, 1.0, 1.0, 1.0]);
        assert!((c[0] - 2.0).abs() < 1e-15);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-15));
        assert!(dct_ii(&[0.0; 8]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mfcc_requires_mfb_input() {
        let t = CepstralTensor::new(Array2::zeros((2, 8)), CepstralKind::Mfcc).unwrap();
        assert!(dct_mfcc(&t).is_err());
    }

    #[test]
    fn natural_log_switch() {
        let fb = FilterBank::new(100.0, 26, 512).unwrap();
        let p = periodogram(&[0.0; 100], 512).unwrap();
        let t = mfb_with_base(&[p], &fb, 8, LogBase::Natural).unwrap();
        assert!(t.values().iter().all(|&v| (v - (1e-12f64).ln()).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn dct_round_trip_and_energy(row in prop::collection::vec(-15.0f64..5.0, 1..32)) {
            let c = dct_ii(&row);
            let back = idct_ii(&c);
            for (a, b) in row.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let e_in: f64 = row.iter().map(|v| v * v).sum();
            let e_out: f64 = c.iter().map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-9 * e_in.max(1.0));
        }

        #[test]
        fn mel_monotone_and_invertible(a in 0.0f64..1000.0, b in 0.0f64..1000.0) {
            let (ma, mb) = (hz_to_mel(a).unwrap(), hz_to_mel(b).unwrap());
            if a < b { prop_assert!(ma < mb); }
            let back = mel_to_hz(ma).unwrap();
            prop_assert!((back - a).abs() <= 1e-9 * a.max(1e-3));
        }

        #[test]
        fn energy_scaling_adds_log(c in 1e-3f64..1e3, seed in 0u64..1000) {
            let fb = FilterBank::new(200.0, 26, 512).unwrap();
            let x: Vec<f64> = (0..200).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 / 50.0 - 1.0).collect();
            let p = periodogram(&x, 512).unwrap();
            let a = mfb(&[p.clone()], &fb, 26).unwrap();
            let b = mfb(&[p.scaled(c)], &fb, 26).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                if *u > -8.0 {
                    prop_assert!((v - u - c.log10()).abs() < 1e-9);
                }
            }
        }
    }
}
