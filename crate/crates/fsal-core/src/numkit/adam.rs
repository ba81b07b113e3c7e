use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters; defaults match the common "default settings".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Result<Self> {
        if !(0.0..1.0).contains(&hyper.beta1) || !(0.0..1.0).contains(&hyper.beta2) {
            return Err(Error::InvalidArgument(format!(
                "betas must lie in [0,1): beta1={} beta2={}",
                hyper.beta1, hyper.beta2
            )));
        }
        if hyper.learning_rate <= 0.0 || hyper.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate and epsilon must be positive".into(),
            ));
        }
        Ok(Self {
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate: hyper.learning_rate,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            epsilon: hyper.epsilon,
        })
    }
}

/// One bias-corrected Adam update. Pure: returns the new parameters and state.
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::Dimension(format!(
            "adam_step lengths disagree: params={} grads={} moments={}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient in adam_step".into()));
    }
    let mut next = state.clone();
    next.step = state.step + 1;
    let t = next.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = params.to_vec();
    for i in 0..out.len() {
        let m = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * grads[i];
        let v = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        next.first_moment[i] = m;
        next.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        out[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((out, next))
}
