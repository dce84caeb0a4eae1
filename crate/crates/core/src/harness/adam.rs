//! AdamW on flat parameter vectors: adaptive moments with bias correction
//! and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Fixed hyper-parameters of the update rule.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One AdamW update in place:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`, bias-corrected
/// `m_hat / (sqrt(v_hat) + eps)` step, and decoupled decay `lr*wd*p`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    ap: AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch {
            expected: params.len(),
            got: if grads.len() != params.len() {
                grads.len()
            } else {
                state.m.len()
            },
            context: "adam_step buffers".to_string(),
        });
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(ap.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(ap.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient component {i}")));
        }
        state.m[i] = ap.beta1 * state.m[i] + (1.0 - ap.beta1) * g;
        state.v[i] = ap.beta2 * state.v[i] + (1.0 - ap.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (libm::sqrt(v_hat) + ap.eps) + ap.weight_decay * params[i]);
    }
    Ok(())
}
