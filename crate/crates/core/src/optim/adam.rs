use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_HAT: f64 = 1e-8;

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps_hat: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ModelParams<T>, lr: f64) -> Self {
        let zeros: BTreeMap<String, Vec<T>> = params
            .iter()
            .map(|(n, t)| (n.to_string(), vec![T::zero(); t.len()]))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            lr: T::lit(lr),
            beta1: T::lit(BETA1),
            beta2: T::lit(BETA2),
            eps_hat: T::lit(EPS_HAT),
        }
    }
}

/// One bias-corrected Adam update of every parameter tensor.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
) -> Result<()> {
    for (name, t) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient { name: name.to_string() })?;
        if g.len() != t.len() {
            return Err(Error::shape("adam_step", t.shape(), &[g.len()]));
        }
        if !state.m.contains_key(name) || state.m[name].len() != t.len() {
            return Err(Error::InvalidArgument(format!("optimizer state does not cover {name}")));
        }
    }
    state.step += 1;
    let one = T::one();
    let k = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = one - state.beta1.powi(k);
    let c2 = one - state.beta2.powi(k);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps_hat);
    for (name, t) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
