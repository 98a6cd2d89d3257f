//! Finite-difference check of the full training loss, one parameter tensor
//! at a time.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::TrainSample;
use crate::autodiff::{finite_diff_check_adaptive, Tape, Var};
use crate::error::{Error, Result};
use crate::loss::pose_loss;
use crate::model::{forward_planned, AttentionMode, ModelParams, PointLocConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    /// Coordinates probed per tensor; smaller tensors are checked in full.
    pub coords_per_tensor: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Relative gap between one-sided slopes that signals a kink inside
    /// the step; the step then shrinks tenfold, up to `max_shrinks` times.
    pub kink_tol: f64,
    pub max_shrinks: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_tensor: 32,
            seed: 0,
            tolerance: 1e-4,
            kink_tol: 1e-4,
            max_shrinks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    /// Coordinates checked with a reduced step.
    pub shrunk: usize,
    pub max_rel_error: f64,
}

impl LayerCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Redraws every bias uniformly from `±amplitude`. Freshly initialized
/// biases are all zero, which puts rows with near-zero input exactly on the
/// LeakyReLU kink; a generic point avoids that.
pub fn jitter_biases<T: Scalar>(params: &mut ModelParams<T>, seed: u64, amplitude: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in params.iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = T::lit(rng.random_range(-amplitude..=amplitude));
            }
        }
    }
}

/// Mean loss over `samples` with `name` bound to the node `x`.
fn loss_with<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    name: &str,
    params: &ModelParams<T>,
    config: &PointLocConfig,
    samples: &[TrainSample<T>],
    mode: AttentionMode,
) -> Result<Var> {
    let mut vars = params.register_frozen(tape);
    vars.replace(name, x)?;
    let mut total = None;
    for s in samples {
        let pred = forward_planned(tape, &vars, config, &s.plan, mode, None)?;
        let l = pose_loss(tape, pred, &s.target, vars.loss_factors()?)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("gradient check needs a sample".into()))?;
    tape.scale(total, T::one() / T::from_usize(samples.len()).expect("count fits"))
}

/// Checks every parameter tensor in name order.
pub fn check_model_gradients<T: Scalar>(
    params: &ModelParams<T>,
    config: &PointLocConfig,
    samples: &[TrainSample<T>],
    mode: AttentionMode,
    cfg: &GradcheckConfig,
) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = T::lit(cfg.eps);
    params
        .iter()
        .map(|(name, tensor)| {
            let coords: Vec<usize> = if tensor.len() <= cfg.coords_per_tensor {
                (0..tensor.len()).collect()
            } else {
                let mut c = sample(&mut rng, tensor.len(), cfg.coords_per_tensor).into_vec();
                c.sort_unstable();
                c
            };
            let f = |tape: &mut Tape<T>, x: Var| loss_with(tape, x, name, params, config, samples, mode);
            let r = finite_diff_check_adaptive(f, tensor, eps, &coords, T::lit(cfg.kink_tol), cfg.max_shrinks)?;
            Ok(LayerCheck {
                name: name.to_string(),
                len: tensor.len(),
                checked: coords.len(),
                shrunk: r.shrunk,
                max_rel_error: r.max_rel_error.as_f64(),
            })
        })
        .collect()
}

/// Pass/fail table, one row per tensor.
pub fn format_checks(checks: &[LayerCheck], tolerance: f64) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>7}  {:>6}  {:>12}  result\n",
        "name", "size", "checked", "shrunk", "max_rel_err"
    );
    for c in checks {
        let verdict = if c.passes(tolerance) { "PASS" } else { "FAIL" };
        s.push_str(&format!(
            "{:<width$}  {:>8}  {:>7}  {:>6}  {:>12.3e}  {verdict}\n",
            c.name, c.len, c.checked, c.shrunk, c.max_rel_error
        ));
    }
    s
}
