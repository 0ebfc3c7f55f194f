use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Trapezoidal amplitude envelope, as fractions of the record duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rise_end: f64,
    pub decay_start: f64,
}

impl Envelope {
    fn at(&self, frac: f64) -> f64 {
        if frac < self.rise_end {
            frac / self.rise_end
        } else if frac <= self.decay_start {
            1.0
        } else {
            ((1.0 - frac) / (1.0 - self.decay_start)).max(0.0)
        }
    }
}

/// Two orthogonal horizontal ground-acceleration components in m/s^2.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGM {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sr: f64,
    pub envelope: Envelope,
    /// Center frequency of the band-pass shaping filter, Hz.
    pub band_hz: f64,
    pub seed: u64,
}

impl SyntheticGM {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.x.len() as f64 / self.sr
    }

    /// Peak absolute acceleration over both components.
    pub fn pga(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.y)
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| v * factor).collect(),
            y: self.y.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// RBJ band-pass biquad (constant 0 dB peak gain).
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl BandPass {
    fn new(center_hz: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sr;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Band-limited white noise under a trapezoidal envelope, scaled so the larger
/// component peaks at `intensity_scale` g.
pub fn generate_gm(seed: u64, sr: f64, duration: f64, intensity_scale: f64) -> Result<SyntheticGM> {
    if !(50.0..=500.0).contains(&sr) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must be in [50, 500] Hz, got {sr}"
        )));
    }
    if !(10.0..=120.0).contains(&duration) {
        return Err(Error::InvalidArgument(format!(
            "duration must be in [10, 120] s, got {duration}"
        )));
    }
    if !(intensity_scale.is_finite() && intensity_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "intensity scale must be non-negative, got {intensity_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_hz = rng.random_range(1.0..4.0);
    let envelope = Envelope {
        rise_end: rng.random_range(0.05..0.15),
        decay_start: rng.random_range(0.35..0.6),
    };
    let n = (duration * sr).round() as usize;
    let filter = BandPass::new(band_hz, 0.8, sr);

    let component = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let filtered = filter.run(&noise);
        filtered
            .iter()
            .enumerate()
            .map(|(i, v)| v * envelope.at(i as f64 / n as f64))
            .collect()
    };
    let x = component(&mut rng);
    let y = component(&mut rng);

    let peak = x.iter().chain(&y).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let gain = if peak > 0.0 {
        intensity_scale * GRAVITY / peak
    } else {
        0.0
    };
    Ok(SyntheticGM {
        x: x.iter().map(|v| v * gain).collect(),
        y: y.iter().map(|v| v * gain).collect(),
        sr,
        envelope,
        band_hz,
        seed,
    })
}

/// Exact cosine and sine for multiples of 90 degrees.
fn cos_sin_deg(angle_deg: f64) -> (f64, f64) {
    let quarter = angle_deg / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let rad = angle_deg.to_radians();
        (rad.cos(), rad.sin())
    }
}

/// Rotate the component pair counterclockwise by `angle_deg`.
pub fn rotate_gm(gm: &SyntheticGM, angle_deg: f64) -> SyntheticGM {
    let (c, s) = cos_sin_deg(angle_deg);
    let (x, y) = gm
        .x
        .iter()
        .zip(&gm.y)
        .map(|(&x, &y)| (c * x - s * y, s * x + c * y))
        .unzip();
    SyntheticGM {
        x,
        y,
        ..gm.clone()
    }
}
