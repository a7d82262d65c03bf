//! First-order optimizers over [`ParamVector`]s.

use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam {
        config: AdamConfig,
        state: Option<AdamState>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::adam(AdamConfig::default()),
        }
    }

    pub fn adam(config: AdamConfig) -> Self {
        Optimizer::Adam {
            config,
            state: None,
        }
    }

    /// Number of steps taken so far (always 0 for SGD, which is stateless).
    pub fn steps(&self) -> i32 {
        match self {
            Optimizer::Sgd => 0,
            Optimizer::Adam { state, .. } => state.as_ref().map_or(0, |s| s.t),
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector, lr: f64) -> Result<()> {
        params.check_layout(grads, "optimizer step")?;
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { config, state } => {
                let n = params.len();
                let st = state.get_or_insert_with(|| AdamState {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    t: 0,
                });
                if st.m.len() != n {
                    return Err(Error::usage("optimizer state belongs to a different layout"));
                }
                st.t += 1;
                let c1 = 1.0 - config.beta1.powi(st.t);
                let c2 = 1.0 - config.beta2.powi(st.t);
                for (((p, &g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grads.values())
                    .zip(st.m.iter_mut())
                    .zip(st.v.iter_mut())
                {
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
                }
            }
        }
        Ok(())
    }
}
