//! AdamW with independent parameter groups.
//!
//! ```text
//! p <- p - lr * wd * p
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! p <- p - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientBundle, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl GroupConfig {
    pub fn lr(learning_rate: f64) -> Self {
        GroupConfig { learning_rate, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub backbone: GroupConfig,
    pub source_shift: GroupConfig,
    pub target_shift: GroupConfig,
    pub source_scale: GroupConfig,
    pub target_scale: GroupConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            backbone: GroupConfig::lr(1e-5),
            source_shift: GroupConfig::lr(1e-3),
            target_shift: GroupConfig::lr(1e-4),
            source_scale: GroupConfig::lr(1e-5),
            target_scale: GroupConfig::lr(1e-5),
        }
    }
}

impl OptimizerConfig {
    pub fn group(&self, name: &str) -> Option<&GroupConfig> {
        match name {
            "backbone" => Some(&self.backbone),
            "source_shift" => Some(&self.source_shift),
            "target_shift" => Some(&self.target_shift),
            "source_scale" => Some(&self.source_scale),
            "target_scale" => Some(&self.target_scale),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (b, what) in [(self.beta1, "beta1"), (self.beta2, "beta2")] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{what} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        for name in crate::model::GROUPS {
            let g = self.group(name).unwrap();
            if !(g.learning_rate >= 0.0 && g.learning_rate.is_finite()) || !(g.weight_decay >= 0.0 && g.weight_decay.is_finite()) {
                return Err(Error::Config(format!("group `{name}` needs a nonnegative learning rate and weight decay")));
            }
        }
        Ok(())
    }
}

/// Moment buffers for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub groups: Vec<GroupState>,
}

impl AdamWState {
    /// Zero moments shaped like every group of `model`.
    pub fn new(model: &Model) -> Self {
        AdamWState {
            step: 0,
            groups: model
                .groups()
                .into_iter()
                .map(|(name, p)| GroupState { name: name.to_string(), m: vec![0.0; p.len()], v: vec![0.0; p.len()] })
                .collect(),
        }
    }

    pub fn group(&self, name: &str) -> Option<&GroupState> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// One AdamW update of every group in `model`. Gradients are checked for
/// non-finite values before anything is modified.
pub fn adamw_step(state: &mut AdamWState, cfg: &OptimizerConfig, model: &mut Model, grads: &GradientBundle) -> Result<()> {
    for (name, g) in grads.groups() {
        if let Some(array) = g.first_non_finite() {
            return Err(Error::NonFiniteGradient { group: name.to_string(), array: array.to_string() });
        }
    }
    state.step += 1;
    let k = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(k);
    let bc2 = 1.0 - cfg.beta2.powi(k);
    for (name, params) in model.groups_mut() {
        let gc = cfg.group(name).expect("known group");
        let grad = grads
            .group(name)
            .ok_or_else(|| Error::Domain(format!("missing gradient for group `{name}`")))?;
        let st = state
            .groups
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Domain(format!("missing optimizer state for group `{name}`")))?;
        if grad.len() != params.len() || st.m.len() != params.len() {
            return Err(Error::Shape { expected: params.len(), got: grad.len() });
        }
        let (lr, wd) = (gc.learning_rate, gc.weight_decay);
        for (((p, &g), m), v) in params.data_mut().iter_mut().zip(grad.data()).zip(&mut st.m).zip(&mut st.v) {
            if wd != 0.0 {
                *p -= lr * wd * *p;
            }
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
