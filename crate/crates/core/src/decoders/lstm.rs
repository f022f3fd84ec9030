//! Sigmoid-output LSTM that predicts labels one at a time.
//!
//! Per step `t`, with `x` the encoded image and `y` the previous label bit:
//!
//! ```text
//! g_k = sigmoid(x W_k + h U_k + y V_k + b_k)   for k in {i, o, f}
//! g_g =         x W_g + h U_g + y V_g + b_g
//! c   = g_f * c_prev + g_i * tanh(g_g)
//! h   = g_o * tanh(c)
//! m   = sigmoid(h q + b_l)
//! ```
//!
//! The initial `(h, c)` come from two separate one-hidden-layer networks
//! applied to `x`. The chain always runs exactly `T` steps; the first step
//! sees a previous label of 0.

use serde::{Deserialize, Serialize};

use super::{labels_to_tensor, LabelVector};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamId, ParamSet};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    /// LSTM state dimension.
    pub hidden: usize,
    /// Number of labels, i.e. decoding steps.
    pub num_labels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Output,
    Forget,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Output, Gate::Forget, Gate::Candidate];

    fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Forget => "f",
            Gate::Candidate => "g",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct InitNet {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Recurrent state between decoding steps.
#[derive(Clone, Copy, Debug)]
pub struct StepState {
    pub h: Var,
    pub c: Var,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmDecoderParams {
    config: LstmConfig,
    encoded_dim: usize,
    params: ParamSet,
    w: [ParamId; 4],
    u: [ParamId; 4],
    v: [ParamId; 4],
    b: [ParamId; 4],
    /// Output projection, stored as an `[H,1]` column.
    q: ParamId,
    b_l: ParamId,
    h0: InitNet,
    c0: InitNet,
}

impl LstmDecoderParams {
    /// Uniform(-1/sqrt(H), 1/sqrt(H)) matrices, zero biases except the
    /// forget gate, which starts at 1.
    pub fn new(encoded_dim: usize, config: LstmConfig, seed: u64) -> Self {
        let mut rng = substream(seed, "init/lstm");
        let bound = 1.0 / (config.hidden as f64).sqrt();
        Self::build(encoded_dim, config, |name, shape| {
            if name == "b_f" {
                Tensor::ones(shape)
            } else if name.starts_with('b') || name.ends_with(".b1") || name.ends_with(".b2") {
                Tensor::zeros(shape)
            } else {
                uniform(shape, bound, &mut rng)
            }
        })
    }

    /// Every parameter zero: all gates 0.5 and every output 0.5.
    pub fn zeros(encoded_dim: usize, config: LstmConfig) -> Self {
        Self::build(encoded_dim, config, |_, shape| Tensor::zeros(shape))
    }

    fn build(encoded_dim: usize, config: LstmConfig, mut init: impl FnMut(&str, Vec<usize>) -> Tensor) -> Self {
        let (d, h) = (encoded_dim, config.hidden);
        let mut params = ParamSet::new();
        let mut add = |params: &mut ParamSet, name: String, shape: Vec<usize>| {
            let t = init(&name, shape);
            params.add(format!("decoder.{name}"), t)
        };
        let mut group = |params: &mut ParamSet, prefix: &str, shape: &[usize]| {
            Gate::ALL.map(|g| add(params, format!("{prefix}_{}", g.suffix()), shape.to_vec()))
        };
        let w = group(&mut params, "W", &[d, h]);
        let u = group(&mut params, "U", &[h, h]);
        let v = group(&mut params, "V", &[1, h]);
        let b = group(&mut params, "b", &[h]);
        let mut add = |params: &mut ParamSet, name: &str, shape: Vec<usize>| {
            let t = init(name, shape);
            params.add(format!("decoder.{name}"), t)
        };
        let q = add(&mut params, "q", vec![h, 1]);
        let b_l = add(&mut params, "b_l", vec![1]);
        let mut net = |params: &mut ParamSet, prefix: &str| InitNet {
            w1: add(params, &format!("{prefix}.w1"), vec![d, h]),
            b1: add(params, &format!("{prefix}.b1"), vec![h]),
            w2: add(params, &format!("{prefix}.w2"), vec![h, h]),
            b2: add(params, &format!("{prefix}.b2"), vec![h]),
        };
        let h0 = net(&mut params, "init_h");
        let c0 = net(&mut params, "init_c");
        LstmDecoderParams {
            config,
            encoded_dim,
            params,
            w,
            u,
            v,
            b,
            q,
            b_l,
            h0,
            c0,
        }
    }

    pub fn config(&self) -> LstmConfig {
        self.config
    }

    pub fn encoded_dim(&self) -> usize {
        self.encoded_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `(W, U, V, b)` parameter ids of one gate.
    pub fn gate_ids(&self, gate: Gate) -> [ParamId; 4] {
        let k = gate as usize;
        [self.w[k], self.u[k], self.v[k], self.b[k]]
    }

    /// `(q, b_l)` parameter ids of the output projection.
    pub fn output_ids(&self) -> (ParamId, ParamId) {
        (self.q, self.b_l)
    }

    fn check_enc(&self, tape: &Tape, x_enc: Var) -> Result<usize> {
        let s = tape.shape(x_enc);
        if s.len() != 2 || s[1] != self.encoded_dim {
            return Err(Error::config(format!(
                "LSTM decoder expects x_enc [N,{}], got {s:?}",
                self.encoded_dim
            )));
        }
        Ok(s[0])
    }

    fn init_net(&self, tape: &mut Tape, bound: &Bound, x_enc: Var, net: &InitNet) -> Result<Var> {
        let hidden = tape.affine(x_enc, bound.var(net.w1), Some(bound.var(net.b1)))?;
        let hidden = tape.tanh(hidden)?;
        tape.affine(hidden, bound.var(net.w2), Some(bound.var(net.b2)))
    }

    /// `(h0, c0)` from the encoded image.
    pub fn init_state(&self, tape: &mut Tape, bound: &Bound, x_enc: Var) -> Result<StepState> {
        self.check_enc(tape, x_enc)?;
        let h = self.init_net(tape, bound, x_enc, &self.h0)?;
        let c = self.init_net(tape, bound, x_enc, &self.c0)?;
        Ok(StepState { h, c, t: 0 })
    }

    /// `x W_k + b_k` for every gate; constant across steps.
    fn project(&self, tape: &mut Tape, bound: &Bound, x_enc: Var) -> Result<[Var; 4]> {
        let mut out = [x_enc; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = tape.affine(x_enc, bound.var(self.w[k]), Some(bound.var(self.b[k])))?;
        }
        Ok(out)
    }

    /// One decoding step: the Bernoulli mean `m_t [N,1]` and the next state.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_enc: Var,
        y_prev: Var,
        state: StepState,
    ) -> Result<(Var, StepState)> {
        self.check_enc(tape, x_enc)?;
        let proj = self.project(tape, bound, x_enc)?;
        self.step_projected(tape, bound, &proj, y_prev, state)
    }

    fn step_projected(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        proj: &[Var; 4],
        y_prev: Var,
        state: StepState,
    ) -> Result<(Var, StepState)> {
        if state.t >= self.config.num_labels {
            return Err(Error::usage(format!(
                "decoder step {} but only {} labels",
                state.t, self.config.num_labels
            )));
        }
        let n = tape.shape(proj[0])[0];
        if tape.shape(y_prev) != [n, 1] {
            return Err(Error::config(format!(
                "previous label must be [{n},1], got {:?}",
                tape.shape(y_prev)
            )));
        }
        if let Some((index, &value)) = tape
            .value(y_prev)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain {
                op: "lstm_step",
                index,
                value,
            });
        }
        let mut pre = [y_prev; 4];
        for k in 0..4 {
            let hu = tape.matmul(state.h, bound.var(self.u[k]))?;
            let yv = tape.matmul(y_prev, bound.var(self.v[k]))?;
            let s = tape.add(proj[k], hu)?;
            pre[k] = tape.add(s, yv)?;
        }
        let gi = tape.sigmoid(pre[Gate::Input as usize])?;
        let go = tape.sigmoid(pre[Gate::Output as usize])?;
        let gf = tape.sigmoid(pre[Gate::Forget as usize])?;
        let cand = tape.tanh(pre[Gate::Candidate as usize])?;

        let keep = tape.mul(gf, state.c)?;
        let write = tape.mul(gi, cand)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(go, tc)?;
        let logit = tape.affine(h, bound.var(self.q), Some(bound.var(self.b_l)))?;
        let m = tape.sigmoid(logit)?;
        Ok((m, StepState { h, c, t: state.t + 1 }))
    }

    /// Factor means `[N,T]` with the ground-truth previous label fed at every step.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_enc: Var,
        labels: &[LabelVector],
    ) -> Result<Var> {
        let n = self.check_enc(tape, x_enc)?;
        let t_total = self.config.num_labels;
        if labels.len() != n || labels.iter().any(|l| l.len() != t_total) {
            return Err(Error::config(format!(
                "teacher forcing needs {n} label vectors of length {t_total}"
            )));
        }
        let y = labels_to_tensor(labels)?;
        let proj = self.project(tape, bound, x_enc)?;
        let mut state = self.init_state(tape, bound, x_enc)?;
        let mut outputs = Vec::with_capacity(t_total);
        for t in 0..t_total {
            let prev: Vec<f64> = if t == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|i| y.at2(i, t - 1)).collect()
            };
            let y_prev = tape.constant(Tensor::new(vec![n, 1], prev)?)?;
            let (m, next) = self.step_projected(tape, bound, &proj, y_prev, state)?;
            outputs.push(m);
            state = next;
        }
        tape.concat_many(&outputs)
    }

    /// Greedy chain: each step predicts 1 iff `m_t > 0.5` and feeds that
    /// prediction forward. Returns the predicted labels and the means `[N,T]`.
    pub fn decode_greedy(&self, tape: &mut Tape, bound: &Bound, x_enc: Var) -> Result<(Vec<LabelVector>, Var)> {
        let n = self.check_enc(tape, x_enc)?;
        let t_total = self.config.num_labels;
        let proj = self.project(tape, bound, x_enc)?;
        let mut state = self.init_state(tape, bound, x_enc)?;
        let mut outputs = Vec::with_capacity(t_total);
        let mut predicted = vec![LabelVector::zeros(t_total); n];
        let mut prev = vec![0.0; n];
        for t in 0..t_total {
            let y_prev = tape.constant(Tensor::new(vec![n, 1], prev.clone())?)?;
            let (m, next) = self.step_projected(tape, bound, &proj, y_prev, state)?;
            for (i, &p) in tape.value(m).data().iter().enumerate() {
                let bit = p > 0.5;
                predicted[i].set(t, bit);
                prev[i] = if bit { 1.0 } else { 0.0 };
            }
            outputs.push(m);
            state = next;
        }
        Ok((predicted, tape.concat_many(&outputs)?))
    }
}
