use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamId, ParamSet};
use crate::rng::substream;

/// One sigmoid output per label sharing the encoder features:
/// `m = sigmoid(x_enc W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentHeadParams {
    params: ParamSet,
    weight: ParamId,
    bias: ParamId,
}

impl IndependentHeadParams {
    pub fn new(encoded_dim: usize, num_labels: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "init/independent");
        let bound = 1.0 / (encoded_dim.max(1) as f64).sqrt();
        Self::from_tensors(
            uniform(vec![encoded_dim, num_labels], bound, &mut rng),
            Tensor::zeros(vec![num_labels]),
        )
        .expect("consistent shapes")
    }

    pub fn zeros(encoded_dim: usize, num_labels: usize) -> Self {
        Self::from_tensors(
            Tensor::zeros(vec![encoded_dim, num_labels]),
            Tensor::zeros(vec![num_labels]),
        )
        .expect("consistent shapes")
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::config(format!(
                "independent head weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            )));
        }
        let mut params = ParamSet::new();
        let weight = params.add("head.weight", weight);
        let bias = params.add("head.bias", bias);
        Ok(IndependentHeadParams { params, weight, bias })
    }

    pub fn encoded_dim(&self) -> usize {
        self.params.get(self.weight).shape()[0]
    }

    pub fn num_labels(&self) -> usize {
        self.params.get(self.weight).shape()[1]
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn decode(&self, tape: &mut Tape, bound: &Bound, x_enc: Var) -> Result<Var> {
        let d = tape.shape(x_enc);
        if d.len() != 2 || d[1] != self.encoded_dim() {
            return Err(Error::config(format!(
                "independent head expects [N,{}], got {d:?}",
                self.encoded_dim()
            )));
        }
        let logits = tape.affine(x_enc, bound.var(self.weight), Some(bound.var(self.bias)))?;
        tape.sigmoid(logits)
    }
}

/// Bernoulli means `[N,T]` of the per-label factors.
pub fn decode_independent(x_enc: &Tensor, params: &IndependentHeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.params().bind(&mut tape, false)?;
    let x = tape.constant(x_enc.clone())?;
    let m = params.decode(&mut tape, &bound, x)?;
    Ok(tape.value(m).clone())
}
