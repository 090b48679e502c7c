use ndarray::Zip;

use super::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamwConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamwState<T> {
    pub first_moment: MlpParams<T>,
    pub second_moment: MlpParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamwState<T> {
    pub fn new(params: &MlpParams<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
///
/// `p ← p(1 − lr·wd) − lr · m̂ / (√v̂ + eps)`
pub fn adamw_step<T: Scalar>(
    params: &mut MlpParams<T>,
    grads: &MlpParams<T>,
    state: &mut AdamwState<T>,
    cfg: &AdamwConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) || !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lr ({}) and eps ({}) must be positive",
            cfg.lr, cfg.eps
        )));
    }
    if grads.widths != params.widths || state.first_moment.widths != params.widths {
        return Err(Error::InvalidArgument(
            "gradient/optimizer shapes differ from parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = T::lit(cfg.lr);
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let eps = T::lit(cfg.eps);
    let decay = T::one() - lr * T::lit(cfg.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    let update = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (T::one() - b1) * *g;
        *v = b2 * *v + (T::one() - b2) * *g * *g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
    };

    let AdamwState {
        first_moment,
        second_moment,
        ..
    } = state;
    for l in 0..params.n_layers() {
        Zip::from(&mut params.layer_weights[l])
            .and(&grads.layer_weights[l])
            .and(&mut first_moment.layer_weights[l])
            .and(&mut second_moment.layer_weights[l])
            .for_each(update);
        Zip::from(&mut params.layer_biases[l])
            .and(&grads.layer_biases[l])
            .and(&mut first_moment.layer_biases[l])
            .and(&mut second_moment.layer_biases[l])
            .for_each(update);
    }
    Ok(())
}
