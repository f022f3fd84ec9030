use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push((name.into(), value));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Number of scalar learnables.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copies of every tensor, in entry order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Record every tensor on `tape`; `trainable` decides whether gradients
    /// flow back to them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Gradients for every entry after `tape.backward`, in entry order.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|((_, t), &v)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles for tensors already on the tape, in [`ParamSet`] entry order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Tensor with entries drawn from `uniform(-bound, bound)`.
pub(crate) fn uniform(shape: Vec<usize>, bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}
