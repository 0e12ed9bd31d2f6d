use std::cell::RefCell;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamSet};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Builds a graph with `build`, then runs the reverse pass from its scalar
/// output. Returns the loss value together with gradients for every parameter.
pub fn forward_backward<T, F>(params: &ParamSet<T>, build: F) -> Result<(T, Gradients<T>)>
where
    T: Real,
    F: FnOnce(&mut Graph<T>, &ParamSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let grads = g.backward(loss, params.len())?;
    Ok((g.scalar(loss), grads))
}

/// Maximum over coordinates of `|analytic - fd| / max(1, |fd|)` where `fd` is
/// the central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn grad_check_fn<F>(f: F, analytic: &[f64], x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "grad_check",
            format!(
                "{} analytic entries for {} coordinates",
                analytic.len(),
                x.len()
            ),
        ));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: format!("grad_check coordinate {i}"),
            });
        }
        let fd = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference verification of a graph-built scalar function over every
/// coordinate of `params`.
pub fn grad_check<F>(params: &ParamSet<f64>, h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let (_, grads) = forward_backward(params, &build)?;
    let analytic = grads.flatten(params);
    let x = params.flatten();
    let scratch = RefCell::new(params.clone());
    grad_check_fn(
        |flat| {
            let mut p = scratch.borrow_mut();
            p.assign_flat(flat);
            let mut g = Graph::new();
            let out = build(&mut g, &p)?;
            g.check_finite()?;
            Ok(g.scalar(out))
        },
        &analytic,
        &x,
        h,
    )
}
