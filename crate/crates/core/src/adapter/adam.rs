use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::params::{AdapterGrad, AdapterParams};
use crate::error::{Error, Result};

/// Learning rate used when none is configured.
pub const DEFAULT_LR: f64 = 0.0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments.
///
/// Parameters and moments are rounded to single precision after every update
/// so that checkpoints written as `f32` reload bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One step over the parameter `ranges`; entries outside them are left untouched.
    pub fn update(&mut self, params: &mut AdapterParams, grad: &AdapterGrad, ranges: &[Range<usize>]) -> Result<()> {
        let n = params.data.len();
        if grad.data.len() != n || self.m.len() != n {
            return Err(Error::LengthMismatch {
                what: "parameters vs gradient/moments",
                left: n,
                right: grad.data.len().min(self.m.len()),
            });
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for range in ranges {
            for i in range.clone() {
                let g = grad.data[i];
                let m = (beta1 * self.m[i] + (1.0 - beta1) * g) as f32 as f64;
                let v = (beta2 * self.v[i] + (1.0 - beta2) * g * g) as f32 as f64;
                self.m[i] = m;
                self.v[i] = v;
                let step = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                params.data[i] = (params.data[i] - step) as f32 as f64;
            }
        }
        Ok(())
    }
}
