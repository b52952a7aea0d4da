//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// First/second moment estimates plus the step counter. The second moments
/// stay non-negative by construction (convex combinations of squares).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    hyper: AdamParams,
    /// Optional piecewise-constant learning-rate schedule: `(step, rate)`
    /// entries sorted by step; the rate applies from that step (1-based)
    /// onward. Empty means the base rate everywhere.
    schedule: Vec<(u64, f64)>,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamParams) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            hyper,
            schedule: Vec::new(),
        }
    }

    /// Installs a piecewise-constant learning-rate schedule.
    pub fn with_schedule(mut self, mut schedule: Vec<(u64, f64)>) -> Self {
        schedule.sort_by_key(|&(step, _)| step);
        self.schedule = schedule;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> &AdamParams {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Learning rate in effect for step `t` (1-based).
    fn rate_at(&self, t: u64) -> f64 {
        let mut rate = self.hyper.learning_rate;
        for &(step, r) in &self.schedule {
            if t >= step {
                rate = r;
            } else {
                break;
            }
        }
        rate
    }

    /// One bias-corrected Adam update, in place.
    ///
    /// A non-finite gradient entry aborts with the parameter index before
    /// any state is modified.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam step on {} parameters / {} gradients, state holds {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry at parameter index {} is {}",
                i, grads[i]
            )));
        }
        self.t += 1;
        let AdamParams {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.hyper;
        let rate = self.rate_at(self.t);
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
