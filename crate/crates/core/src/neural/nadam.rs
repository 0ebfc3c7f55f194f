//! Nesterov-accelerated Adam.

use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Nadam update on flat slices; `t` is the 1-based step count.
///
/// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
/// `m_hat = m / (1 - b1^(t+1))`, `v_hat = v / (1 - b2^t)`,
/// `theta <- theta - lr (b1 m_hat + (1 - b1) g / (1 - b1^t)) / (sqrt(v_hat) + eps)`.
pub fn nadam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    cfg: &NadamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("Nadam step count starts at 1".into()));
    }
    let NadamConfig { beta1, beta2, eps } = *cfg;
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let m_corr = 1.0 - beta1.powi(exp.saturating_add(1));
    let g_corr = 1.0 - beta1.powi(exp);
    let v_corr = 1.0 - beta2.powi(exp);
    for (((th, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / m_corr;
        let v_hat = *vi / v_corr;
        let step = lr * (beta1 * m_hat + (1.0 - beta1) * g / g_corr) / (v_hat.sqrt() + eps);
        *th -= step;
        if !th.is_finite() {
            return Err(Error::Divergence {
                location: "Nadam update".into(),
            });
        }
    }
    Ok(())
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
    pub cfg: NadamConfig,
}

impl NadamState {
    pub fn new(params: &NetworkParams, cfg: NadamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            cfg,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        for (((theta, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            nadam_update(theta, g, m, v, lr, &cfg, t)?;
        }
        Ok(())
    }
}
