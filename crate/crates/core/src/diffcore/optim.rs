use super::params::ParamSet;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients accumulated in `params`.
/// Gradients are cleared afterwards. A non-finite gradient aborts before any
/// parameter is touched.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, state: &mut OptimState<T>) -> Result<()> {
    for p in params.iter() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("gradient of {}", p.name),
            });
        }
    }
    state.step += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let t = state.step as i32;
    let c1 = T::one() - T::lit(state.beta1.powi(t));
    let c2 = T::one() - T::lit(state.beta2.powi(t));
    let (lr, eps) = (T::lit(state.lr), T::lit(state.eps));
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.values.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.values[i] = p.values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            p.grad[i] = T::zero();
        }
    }
    Ok(())
}
