use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ground_motion::SyntheticGM;
use crate::error::{Error, Result};

const NEWMARK_GAMMA: f64 = 0.5;
const NEWMARK_BETA: f64 = 0.25;
const MAX_NEWTON_ITERS: usize = 50;

/// Single-pier stand-in: one bilinear-hysteretic SDOF per horizontal direction,
/// formulated per unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PierModel {
    pub period_x: f64,
    pub period_y: f64,
    pub damping: f64,
    /// Drift fraction at first yield.
    pub yield_drift: f64,
    /// Post-yield to elastic stiffness ratio.
    pub hardening: f64,
    /// Pier height in metres.
    pub height: f64,
}

impl Default for PierModel {
    fn default() -> Self {
        Self {
            period_x: 0.6,
            period_y: 0.8,
            damping: 0.05,
            yield_drift: 0.005,
            hardening: 0.05,
            height: 6.0,
        }
    }
}

impl PierModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.period_x > 0.0
            && self.period_y > 0.0
            && self.damping > 0.0
            && self.damping < 1.0
            && self.yield_drift > 0.0
            && (0.0..=1.0).contains(&self.hardening)
            && self.height > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid pier model {self:?}")))
        }
    }

    pub fn oscillator(&self, period: f64) -> Oscillator {
        let omega = 2.0 * PI / period;
        Oscillator {
            stiffness: omega * omega,
            damping: 2.0 * self.damping * omega,
            yield_disp: self.yield_drift * self.height,
            hardening: self.hardening,
        }
    }
}

/// Per-unit-mass SDOF: `a + c v + f_s(u) = -a_g`.
#[derive(Debug, Clone, Copy)]
pub struct Oscillator {
    pub stiffness: f64,
    pub damping: f64,
    /// `f64::INFINITY` disables yielding.
    pub yield_disp: f64,
    pub hardening: f64,
}

/// Elastic-perfectly-plastic branch in parallel with a linear spring of stiffness
/// `hardening * k`; `plastic` is the committed plastic offset of the first branch.
#[derive(Debug, Clone, Copy, Default)]
struct Spring {
    plastic: f64,
}

impl Spring {
    /// Restoring force, tangent stiffness and the trial plastic offset at `u`.
    fn trial(&self, osc: &Oscillator, u: f64) -> (f64, f64, f64) {
        let k = osc.stiffness;
        let k_ep = (1.0 - osc.hardening) * k;
        let linear = osc.hardening * k * u;
        if k_ep == 0.0 {
            return (linear, k, self.plastic);
        }
        let f_ep = k_ep * (u - self.plastic);
        let f_max = k_ep * osc.yield_disp;
        if f_ep.abs() <= f_max {
            (linear + f_ep, k, self.plastic)
        } else {
            let f_clamped = f_max.copysign(f_ep);
            (linear + f_clamped, osc.hardening * k, u - f_clamped / k_ep)
        }
    }
}

/// Relative displacement and acceleration histories of one oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct SdofResponse {
    pub displacement: Vec<f64>,
    pub acceleration: Vec<f64>,
}

impl SdofResponse {
    pub fn peak_displacement(&self) -> f64 {
        self.displacement.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Newmark average-acceleration integration with Newton iteration on the restoring force.
pub fn integrate_sdof(
    osc: &Oscillator,
    ground: &[f64],
    dt: f64,
    direction: char,
) -> Result<SdofResponse> {
    let n = ground.len();
    let mut disp = vec![0.0; n];
    let mut acc = vec![0.0; n];
    if n == 0 {
        return Ok(SdofResponse {
            displacement: disp,
            acceleration: acc,
        });
    }
    let (b, g) = (NEWMARK_BETA, NEWMARK_GAMMA);
    let mass_term = 1.0 / (b * dt * dt);
    let damp_term = osc.damping * g / (b * dt);

    let mut spring = Spring::default();
    let (mut u, mut v) = (0.0, 0.0);
    let mut a = -ground[0];
    acc[0] = a;
    let scale = osc.stiffness * osc.yield_disp.min(1.0);

    for step in 1..n {
        let ag = ground[step];
        let (u_n, v_n, a_n) = (u, v, a);
        let accel_of = |u: f64| (u - u_n) * mass_term - v_n / (b * dt) - (0.5 / b - 1.0) * a_n;
        let vel_of = |a_new: f64| v_n + dt * ((1.0 - g) * a_n + g * a_new);

        let mut u_trial = u_n;
        let mut converged = false;
        let mut committed = spring;
        for _ in 0..MAX_NEWTON_ITERS {
            let (f, k_t, plastic) = spring.trial(osc, u_trial);
            let a_trial = accel_of(u_trial);
            let residual = a_trial + osc.damping * vel_of(a_trial) + f + ag;
            let tangent = mass_term + damp_term + k_t;
            let du = -residual / tangent;
            if !du.is_finite() {
                break;
            }
            if du.abs() <= 1e-13 * u_trial.abs().max(osc.yield_disp.min(1.0)).max(1e-300)
                || residual.abs() <= 1e-14 * scale.max(ag.abs())
            {
                committed = Spring { plastic };
                converged = true;
                break;
            }
            u_trial += du;
        }
        if !converged {
            return Err(Error::NewtonNonConvergence { step, direction });
        }
        spring = committed;
        u = u_trial;
        a = accel_of(u);
        v = vel_of(a);
        disp[step] = u;
        acc[step] = a;
    }
    Ok(SdofResponse {
        displacement: disp,
        acceleration: acc,
    })
}

/// Closed-form linear Newmark integration (no Newton, no yielding).
pub fn integrate_linear_sdof(stiffness: f64, damping: f64, ground: &[f64], dt: f64) -> SdofResponse {
    let n = ground.len();
    let mut disp = vec![0.0; n];
    let mut acc = vec![0.0; n];
    if n == 0 {
        return SdofResponse {
            displacement: disp,
            acceleration: acc,
        };
    }
    let (b, g) = (NEWMARK_BETA, NEWMARK_GAMMA);
    let k_eff = stiffness + g / (b * dt) * damping + 1.0 / (b * dt * dt);
    let (mut u, mut v) = (0.0, 0.0);
    let mut a = -ground[0];
    acc[0] = a;
    for step in 1..n {
        let rhs = -ground[step]
            + (u / (b * dt * dt) + v / (b * dt) + (0.5 / b - 1.0) * a)
            + damping * (g / (b * dt) * u + (g / b - 1.0) * v + dt * (g / (2.0 * b) - 1.0) * a);
        let u_new = rhs / k_eff;
        let a_new = (u_new - u) / (b * dt * dt) - v / (b * dt) - (0.5 / b - 1.0) * a;
        let v_new = v + dt * ((1.0 - g) * a + g * a_new);
        u = u_new;
        v = v_new;
        a = a_new;
        disp[step] = u;
        acc[step] = a;
    }
    SdofResponse {
        displacement: disp,
        acceleration: acc,
    }
}

/// Sensor channels and drift label for one excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct PierResponse {
    /// Absolute accelerations at the pier top.
    pub top_x: Vec<f64>,
    pub top_y: Vec<f64>,
    /// Ground accelerations at the pier base.
    pub bottom_x: Vec<f64>,
    pub bottom_y: Vec<f64>,
    /// Peak resultant relative displacement over height.
    pub drift_ratio: f64,
}

pub fn simulate_response(model: &PierModel, gm: &SyntheticGM) -> Result<PierResponse> {
    model.validate()?;
    if gm.x.len() != gm.y.len() || !(gm.sr > 0.0) {
        return Err(Error::InvalidArgument("ground motion components disagree".into()));
    }
    let dt = 1.0 / gm.sr;
    let rx = integrate_sdof(&model.oscillator(model.period_x), &gm.x, dt, 'x')?;
    let ry = integrate_sdof(&model.oscillator(model.period_y), &gm.y, dt, 'y')?;
    let peak = rx
        .displacement
        .iter()
        .zip(&ry.displacement)
        .fold(0.0f64, |acc, (ux, uy)| acc.max(ux.hypot(*uy)));
    let top = |rel: &[f64], ground: &[f64]| -> Vec<f64> {
        rel.iter().zip(ground).map(|(a, g)| a + g).collect()
    };
    Ok(PierResponse {
        top_x: top(&rx.acceleration, &gm.x),
        top_y: top(&ry.acceleration, &gm.y),
        bottom_x: gm.x.clone(),
        bottom_y: gm.y.clone(),
        drift_ratio: peak / model.height,
    })
}
