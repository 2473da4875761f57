use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

/// Adam with bias-corrected moments.
pub struct Adam {
    config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, var) in params.trainable() {
            first.insert(name.to_string(), var.zeros_like()?);
            second.insert(name.to_string(), var.zeros_like()?);
        }
        Ok(Self {
            config,
            state: AdamState {
                step: 0,
                first,
                second,
            },
        })
    }

    pub fn from_state(config: AdamConfig, state: AdamState) -> Self {
        Self { config, state }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (name, var) in params.trainable() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients carry the graph that produced them
            let g = &g.detach();
            let m = self.state.first.get_mut(name).expect("moment per trainable param");
            *m = ((&*m * beta1)? + (g * (1.0 - beta1))?)?;
            let v = self.state.second.get_mut(name).expect("moment per trainable param");
            *v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&*m / correction1)?;
            let v_hat = (&*v / correction2)?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            let next = (var.as_tensor().detach() - (update * learning_rate)?)?;
            var.set(&next)?;
        }
        Ok(())
    }
}
