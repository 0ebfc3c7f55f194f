use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ground_motion::{generate_gm, rotate_gm};
use super::pier::{simulate_response, PierModel};
use crate::error::{Error, Result};
use crate::features::SensorSet;
use crate::signal::{AccelRecord, ChannelId};

/// Upper bound on drift labels; larger responses are regenerated at a lower scale.
pub const MAX_DRIFT: f64 = 0.10;

/// SplitMix64 finalizer, used to derive independent per-item seeds from one root.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `root`.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream)).wrapping_add(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_gms: usize,
    pub angles_deg: Vec<f64>,
    /// Multipliers applied to each ground motion's base PGA.
    pub scales: Vec<f64>,
    pub sr: f64,
    pub duration_s: f64,
    /// Base PGA range in g, drawn once per ground motion.
    pub pga_min_g: f64,
    pub pga_max_g: f64,
    pub pier: PierModel,
    /// Standard deviation of additive Gaussian sensor noise, m/s^2.
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_gms: 30,
            angles_deg: vec![0.0, 60.0, 90.0, 120.0, 150.0],
            scales: vec![0.5, 1.0, 1.5, 2.0],
            sr: 100.0,
            duration_s: 40.0,
            pga_min_g: 0.05,
            pga_max_g: 0.35,
            pier: PierModel::default(),
            noise_std: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn event_count(&self) -> usize {
        self.n_gms * self.angles_deg.len() * self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gms == 0 || self.angles_deg.is_empty() || self.scales.is_empty() {
            return Err(Error::InvalidArgument(
                "synthetic dataset needs at least one GM, angle and scale".into(),
            ));
        }
        if !(self.pga_min_g > 0.0 && self.pga_max_g >= self.pga_min_g) {
            return Err(Error::InvalidArgument(format!(
                "bad PGA range [{}, {}] g",
                self.pga_min_g, self.pga_max_g
            )));
        }
        if self.scales.iter().any(|&s| !(s > 0.0)) || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("scales must be positive, noise non-negative".into()));
        }
        self.pier.validate()
    }
}

/// One earthquake realization: four sensor channels, metadata and label.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSample {
    pub id: String,
    pub gm_id: u32,
    pub angle_deg: f64,
    /// Scale factor actually applied, after any drift-bound reduction.
    pub scale: f64,
    pub sensors: SensorSet,
    pub drift_ratio: f64,
}

fn simulate_event(
    cfg: &SynthConfig,
    root_seed: u64,
    gm_id: u32,
    base_pga: f64,
    angle_deg: f64,
    scale_idx: usize,
) -> Result<EventSample> {
    let gm_seed = derive_seed(root_seed, 1, gm_id as u64);
    let base = generate_gm(gm_seed, cfg.sr, cfg.duration_s, base_pga)?;
    let rotated = rotate_gm(&base, angle_deg);
    let mut scale = cfg.scales[scale_idx];
    let response = loop {
        let r = simulate_response(&cfg.pier, &rotated.scaled(scale))?;
        if r.drift_ratio <= MAX_DRIFT {
            break r;
        }
        scale *= 0.8;
    };

    let mut channels = [
        response.top_x,
        response.top_y,
        response.bottom_x,
        response.bottom_y,
    ];
    if cfg.noise_std > 0.0 {
        let event_index = (gm_id as u64) << 32 | ((angle_deg * 1000.0) as u64) << 8 | scale_idx as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root_seed, 2, event_index));
        for ch in &mut channels {
            for v in ch.iter_mut() {
                *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let [tx, ty, bx, by] = channels;
    let sensors = SensorSet::new(
        AccelRecord::new(tx, cfg.sr, ChannelId::TopX)?,
        AccelRecord::new(ty, cfg.sr, ChannelId::TopY)?,
        AccelRecord::new(bx, cfg.sr, ChannelId::BottomX)?,
        AccelRecord::new(by, cfg.sr, ChannelId::BottomY)?,
    )?;
    Ok(EventSample {
        id: format!("gm{gm_id:03}_a{:03}_s{scale_idx}", angle_deg.round() as i64),
        gm_id,
        angle_deg,
        scale,
        sensors,
        drift_ratio: response.drift_ratio,
    })
}

/// Every (ground motion, angle, scale) combination, ordered GM-major.
/// Events are simulated in parallel; the output order and values do not depend on
/// the worker count.
pub fn generate_dataset(cfg: &SynthConfig, root_seed: u64) -> Result<Vec<EventSample>> {
    cfg.validate()?;
    let mut pga_rng = ChaCha8Rng::seed_from_u64(derive_seed(root_seed, 0, 0));
    let base_pgas: Vec<f64> = (0..cfg.n_gms)
        .map(|_| pga_rng.random_range(cfg.pga_min_g..=cfg.pga_max_g))
        .collect();
    let jobs: Vec<(u32, f64, usize)> = (0..cfg.n_gms as u32)
        .flat_map(|g| {
            cfg.angles_deg
                .iter()
                .flat_map(move |&a| (0..cfg.scales.len()).map(move |s| (g, a, s)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(g, a, s)| simulate_event(cfg, root_seed, g, base_pgas[g as usize], a, s))
        .collect()
}
