//! Acceleration records and their decomposition into overlapping frames.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor position and direction of one accelerometer channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    TopX,
    TopY,
    BottomX,
    BottomY,
    /// Single-channel records with no sensor placement attached.
    Unspecified,
}

impl ChannelId {
    /// Column order of the multi-channel CSV layout.
    pub const SENSOR_ORDER: [ChannelId; 4] = [
        ChannelId::TopX,
        ChannelId::TopY,
        ChannelId::BottomX,
        ChannelId::BottomY,
    ];

    pub fn column_name(self) -> &'static str {
        match self {
            ChannelId::TopX => "ax_top",
            ChannelId::TopY => "ay_top",
            ChannelId::BottomX => "ax_bot",
            ChannelId::BottomY => "ay_bot",
            ChannelId::Unspecified => "value",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column_name())
    }
}

/// One uniformly sampled acceleration channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelRecord {
    samples: Vec<f64>,
    sr: f64,
    channel: ChannelId,
}

impl AccelRecord {
    pub fn new(samples: Vec<f64>, sr: f64, channel: ChannelId) -> Result<Self> {
        if !(sr.is_finite() && sr > 0.0) {
            return Err(Error::InvalidRecord(format!(
                "sampling rate must be positive and finite, got {sr}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "channel {channel} has no samples"
            )));
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSample {
                channel: channel.to_string(),
                index,
            });
        }
        Ok(Self {
            samples,
            sr,
            channel,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sr(&self) -> f64 {
        self.sr
    }

    pub fn channel(&self) -> ChannelId {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record duration `t_g` in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sr
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sr
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.samples.iter().map(|x| x * factor).collect(),
            self.sr,
            self.channel,
        )
    }
}

/// Optional taper applied to each frame before the FFT.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
    Hamming,
}

impl Taper {
    fn coefficient(self, n: usize, len: usize) -> f64 {
        if len < 2 {
            return 1.0;
        }
        let phase = 2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64;
        match self {
            Taper::Rectangular => 1.0,
            Taper::Hann => 0.5 - 0.5 * phase.cos(),
            Taper::Hamming => 0.54 - 0.46 * phase.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub window_len_s: f64,
    pub stride_s: f64,
    #[serde(default)]
    pub taper: Taper,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_len_s: 1.0,
            stride_s: 0.4,
            taper: Taper::Rectangular,
        }
    }
}

/// Fixed-length overlapping windows cut from one record.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    frames: Vec<Vec<f64>>,
    window: usize,
    stride: usize,
    window_len_s: f64,
    stride_s: f64,
}

impl FrameSet {
    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    /// Frame count `N_w`.
    pub fn n_w(&self) -> usize {
        self.frames.len()
    }

    /// Samples per frame.
    pub fn window_samples(&self) -> usize {
        self.window
    }

    pub fn stride_samples(&self) -> usize {
        self.stride
    }

    pub fn window_len_s(&self) -> f64 {
        self.window_len_s
    }

    pub fn stride_s(&self) -> f64 {
        self.stride_s
    }

    pub fn starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.frames.len()).map(move |i| i * self.stride)
    }
}

/// Number of frames covering `len` samples: `1 + ceil(max(0, len - window) / stride)`.
pub fn frame_count(len: usize, window: usize, stride: usize) -> usize {
    1 + len.saturating_sub(window).div_ceil(stride)
}

/// Cut a record into overlapping rectangular frames.
///
/// Frame `i` starts at `i * round(stride_s * sr)` and holds `round(window_len_s * sr)`
/// samples; the final frame is zero-padded when it runs past the end of the record.
pub fn frame_signal(rec: &AccelRecord, window_len_s: f64, stride_s: f64) -> Result<FrameSet> {
    frame_signal_with(
        rec,
        &FrameConfig {
            window_len_s,
            stride_s,
            taper: Taper::Rectangular,
        },
    )
}

pub fn frame_signal_with(rec: &AccelRecord, cfg: &FrameConfig) -> Result<FrameSet> {
    let FrameConfig {
        window_len_s,
        stride_s,
        taper,
    } = *cfg;
    if !(stride_s.is_finite() && stride_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stride must be positive, got {stride_s} s"
        )));
    }
    if !(window_len_s.is_finite() && window_len_s >= stride_s) {
        return Err(Error::InvalidArgument(format!(
            "window ({window_len_s} s) must be at least the stride ({stride_s} s)"
        )));
    }
    // AccelRecord guarantees finiteness, but records can be built by hand in tests.
    if let Some(index) = rec.samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample {
            channel: rec.channel.to_string(),
            index,
        });
    }

    let window = (window_len_s * rec.sr).round() as usize;
    let stride = (stride_s * rec.sr).round() as usize;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {window_len_s} s / stride {stride_s} s round to zero samples at {} Hz",
            rec.sr
        )));
    }

    let samples = rec.samples();
    let n_w = frame_count(samples.len(), window, stride);
    let taper_coeffs: Option<Vec<f64>> = match taper {
        Taper::Rectangular => None,
        t => Some((0..window).map(|n| t.coefficient(n, window)).collect()),
    };

    let frames = (0..n_w)
        .map(|i| {
            let start = i * stride;
            let end = (start + window).min(samples.len());
            let mut frame = vec![0.0; window];
            if start < end {
                frame[..end - start].copy_from_slice(&samples[start..end]);
            }
            if let Some(c) = &taper_coeffs {
                frame.iter_mut().zip(c).for_each(|(x, w)| *x *= w);
            }
            frame
        })
        .collect();

    Ok(FrameSet {
        frames,
        window,
        stride,
        window_len_s,
        stride_s,
    })
}
