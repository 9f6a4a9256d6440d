use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::LstmParams;

use super::Gradients;

/// ADAM hyperparameters. Defaults are the usual `lr = 1e-3, β₁ = 0.9,
/// β₂ = 0.999, ε = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid ADAM settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Bias-corrected first and second moment accumulators, flattened in the
/// canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
        })
    }

    pub fn for_params(config: AdamConfig, params: &LstmParams) -> Result<Self> {
        Self::new(config, params.num_params())
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step_count = 0;
    }

    /// One update of `params` in place against `grads` (same flat layout).
    pub fn update_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "ADAM state holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut LstmParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.0.num_params() != params.num_params() {
        return Err(Error::DimensionMismatch(
            "params and gradients differ in shape".into(),
        ));
    }
    let mut flat = params.to_flat();
    state.update_flat(&mut flat, &grads.0.to_flat())?;
    let mut it = flat.into_iter();
    for slot in params.slots_mut() {
        for (x, v) in slot.iter_mut().zip(&mut it) {
            *x = v;
        }
    }
    Ok(())
}
