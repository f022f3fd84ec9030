use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Neg,
    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        geom: PoolGeom,
    },
    GlobalAvgPool {
        input: Var,
    },
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Offset {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of executed operations.
///
/// Forward ops push nodes in execution order; [`Tape::backward`] walks them
/// in exact reverse, summing gradient contributions from every consumer.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    track_kinks: bool,
    kink_margin: f64,
    branches: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
            track_kinks: false,
            kink_margin: f64::INFINITY,
            branches: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Record the smallest distance to a non-differentiable point
    /// (relu at 0, max-pool ties, clamp bounds) seen by subsequent ops.
    pub fn track_kinks(&mut self, enabled: bool) {
        self.track_kinks = enabled;
    }

    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub(crate) fn tracking_kinks(&self) -> bool {
        self.track_kinks
    }

    /// Hash of every branch taken by kinked ops while tracking. Two forward
    /// passes with equal signatures ran on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    pub(crate) fn note_branches(&mut self, decisions: impl IntoIterator<Item = u64>) {
        for d in decisions {
            self.branches = (self.branches ^ d).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn note_kink(&mut self, margin: f64) {
        if margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation (images, targets).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push_node(value, requires_grad, Op::Leaf, "leaf")
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Gradient accumulated for `var` by the last backward pass.
    ///
    /// `None` when `var` does not require gradients; zeros when it does but
    /// no path reached it.
    pub fn grad(&self, var: Var) -> Option<Tensor> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        let data = node
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
    }

    /// Clear all gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], op: Op, name: &'static str) -> Result<Var> {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, requires_grad, op, name)
    }

    fn push_node(&mut self, value: Tensor, requires_grad: bool, op: Op, name: &'static str) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite { op: name, index });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn accumulate(&mut self, var: Var, delta: &[f64]) {
        let node = &mut self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (g, d) in g.iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::usage(
                "backward called twice without reset_grads",
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(Var(i), &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, out: Var, op: &Op, g: &[f64]) {
        use super::ops;
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => ops::conv::backward(self, *input, *kernel, *bias, geom, g),
            Op::MaxPool { input, argmax } => {
                let mut d = vec![0.0; self.value(*input).numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g[o];
                }
                self.accumulate(*input, &d);
            }
            Op::AvgPool { input, geom } => ops::pool::avg_backward(self, *input, geom, g),
            Op::GlobalAvgPool { input } => {
                let shape = self.shape(*input);
                let hw = shape[2] * shape[3];
                let inv = 1.0 / hw as f64;
                let d: Vec<f64> = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, hw))
                    .collect();
                self.accumulate(*input, &d);
            }
            Op::Affine { x, w, b } => ops::linear::affine_backward(self, *x, *w, *b, g),
            Op::Unary { kind, x } => ops::elementwise::unary_backward(self, out, *kind, *x, g),
            Op::Binary { kind, a, b } => ops::elementwise::binary_backward(self, *kind, *a, *b, g),
            Op::Scale { x, factor } => {
                let d: Vec<f64> = g.iter().map(|v| v * factor).collect();
                self.accumulate(*x, &d);
            }
            Op::Offset { x } => self.accumulate(*x, g),
            Op::Concat { a, b } => ops::shape::concat_backward(self, *a, *b, g),
            Op::Slice { x, start } => ops::shape::slice_backward(self, out, *x, *start, g),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => ops::batch_norm::backward(self, *x, *gamma, *beta, xhat, inv_std, *train, g),
            Op::Sum { x } => {
                let d = vec![g[0]; self.value(*x).numel()];
                self.accumulate(*x, &d);
            }
            Op::Reshape { x } => self.accumulate(*x, g),
        }
    }
}
