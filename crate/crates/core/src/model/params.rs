use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PointLocConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::loss::{LossFactors, BETA_INIT, GAMMA_INIT};
use crate::scalar::Scalar;

pub const BETA: &str = "loss.beta";
pub const GAMMA: &str = "loss.gamma";

/// Every learnable tensor by name, including the loss factors β and γ.
/// Iteration order is the lexicographic name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Shape of one linear layer: `name.weight` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// All linear layers of the network, in initialization order.
pub fn linear_layers(config: &PointLocConfig) -> Vec<LinearSpec> {
    let mut out = Vec::new();
    let mut push = |name: String, fan_in: usize, fan_out: usize| {
        out.push(LinearSpec { name, fan_in, fan_out })
    };
    for (i, layer) in config.sa.iter().enumerate() {
        let widths = &layer.mlp_channels;
        for (l, w) in widths.windows(2).enumerate() {
            let fan_in = if l == 0 { w[0] + 3 } else { w[0] };
            push(format!("sa{}.mlp{}", i + 1, l), fan_in, w[1]);
        }
    }
    let c = config.encoder_channels();
    push("attn.fc".into(), c, c);
    for (l, w) in config.group_all_mlp.windows(2).enumerate() {
        push(format!("ga.mlp{l}"), w[0], w[1]);
    }
    push(
        "ga.fc".into(),
        *config.group_all_mlp.last().expect("non-empty"),
        config.group_all_fc,
    );
    for branch in ["t", "w"] {
        for (l, w) in config.regressor.windows(2).enumerate() {
            push(format!("reg.{branch}.fc{}", l + 1), w[0], w[1]);
        }
    }
    out
}

impl<T: Scalar> ModelParams<T> {
    pub fn empty() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, β = 0, γ = -3.
    pub fn init(config: &PointLocConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::empty();
        for spec in linear_layers(config) {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            let w = (0..spec.fan_in * spec.fan_out)
                .map(|_| T::lit(rng.random_range(-bound..bound)))
                .collect();
            params.insert(
                format!("{}.weight", spec.name),
                Tensor::new(vec![spec.fan_in, spec.fan_out], w).expect("finite init"),
            );
            params.insert(format!("{}.bias", spec.name), Tensor::zeros(vec![spec.fan_out]));
        }
        params.insert(BETA.into(), Tensor::full(vec![1], T::lit(BETA_INIT)));
        params.insert(GAMMA.into(), Tensor::full(vec![1], T::lit(GAMMA_INIT)));
        params
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name, tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn beta(&self) -> T {
        self.tensors[BETA].data()[0]
    }

    pub fn gamma(&self) -> T {
        self.tensors[GAMMA].data()[0]
    }

    /// Places every tensor on the tape as a learnable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        self.register_with(tape, true)
    }

    /// Places every tensor on the tape as a constant.
    pub fn register_frozen(&self, tape: &mut Tape<T>) -> ParamVars {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape<T>, learnable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let mut t = t.clone();
                t.clear_grad();
                let v = if learnable { tape.param(t) } else { tape.constant(t) };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::shape("parameter layout", t.shape(), o.shape()))
                }
                _ => {}
            }
        }
        if let Some(extra) = other.tensors.keys().find(|k| !self.tensors.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }
}

/// Tape handles of a registered [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    /// Points `name` at another node, e.g. a perturbed copy of the tensor.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        *slot = var;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn loss_factors(&self) -> Result<LossFactors> {
        Ok(LossFactors {
            beta: self.get(BETA)?,
            gamma: self.get(GAMMA)?,
        })
    }

    /// Gradients held on `tape` after backward, keyed by parameter name.
    pub fn gradients<T: Scalar>(&self, tape: &Tape<T>) -> Result<BTreeMap<String, Vec<T>>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                tape.grad(v)
                    .map(|g| (name.clone(), g.to_vec()))
                    .ok_or_else(|| Error::MissingGradient { name: name.clone() })
            })
            .collect()
    }
}
