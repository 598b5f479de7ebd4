use glioseg_nn::{Grads, ParamStore};

use super::TrainConfig;
use crate::error::{Error, Result};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Parameters without a
/// gradient slot are treated as having zero gradient. Every gradient is checked
/// for finiteness before any parameter is touched.
pub fn adam_step(params: &mut ParamStore, grads: &Grads, state: &mut AdamState, config: &TrainConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::Precondition("Adam step index starts at 1".into()));
    }
    if state.m.len() != params.len() {
        return Err(Error::Validation(format!(
            "optimizer state holds {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, g) in grads.iter() {
        if id.index() >= params.len() || g.shape() != params.get(id).shape() {
            return Err(Error::Validation(format!(
                "gradient for slot {} does not match the parameter store",
                id.index()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter `{}`",
                params.name(id)
            )));
        }
    }
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let lr = config.learning_rate;
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id).map(|g| g.data());
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta = params.get_mut(id).data_mut();
        for k in 0..theta.len() {
            let gk = g.map_or(0.0, |g| g[k]);
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
    Ok(())
}
