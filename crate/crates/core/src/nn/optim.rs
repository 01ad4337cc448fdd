use serde::{Deserialize, Serialize};

use super::{NnError, ParameterSet, Tensor};

/// RMSProp hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 7e-4,
            decay: 0.99,
            epsilon: 0.1,
        }
    }
}

/// Elementwise RMSProp step on raw slices.
///
/// `acc <- decay * acc + (1 - decay) * g^2`, then `p <- p - lr * g / sqrt(acc + eps)`.
pub fn rmsprop_update(values: &mut [f64], grads: &[f64], acc: &mut [f64], config: &RmsPropConfig) {
    for ((p, &g), a) in values.iter_mut().zip(grads).zip(acc.iter_mut()) {
        *a = config.decay * *a + (1.0 - config.decay) * g * g;
        *p -= config.learning_rate * g / (*a + config.epsilon).sqrt();
    }
}

/// RMSProp with one running second-moment accumulator per scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    config: RmsPropConfig,
    accumulators: Vec<Tensor>,
}

impl RmsProp {
    /// Zeroed accumulators laid out like `params`.
    pub fn new(config: RmsPropConfig, params: &ParameterSet) -> Self {
        let accumulators = params.iter().map(|(_, v, _)| Tensor::zeros(v.shape())).collect();
        Self { config, accumulators }
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    /// Applies the gradient slots of `grads` to the values of `params`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<(), NnError> {
        self.step_scaled(params, grads, 1.0)
    }

    /// Like [`RmsProp::step`] with every gradient multiplied by `scale` first.
    pub fn step_scaled(&mut self, params: &mut ParameterSet, grads: &ParameterSet, scale: f64) -> Result<(), NnError> {
        if !params.same_layout(grads) || params.len() != self.accumulators.len() {
            return Err(NnError::Usage("optimizer, parameters and gradients disagree on layout".into()));
        }
        for (id, acc) in self.accumulators.iter_mut().enumerate() {
            if scale == 1.0 {
                rmsprop_update(params.value_mut(id).data_mut(), grads.grad(id).data(), acc.data_mut(), &self.config);
            } else {
                let scaled: Vec<f64> = grads.grad(id).data().iter().map(|g| g * scale).collect();
                rmsprop_update(params.value_mut(id).data_mut(), &scaled, acc.data_mut(), &self.config);
            }
        }
        Ok(())
    }
}
