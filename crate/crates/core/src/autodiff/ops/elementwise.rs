use crate::autodiff::tape::{BinaryKind, Op, Tape, UnaryKind, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = match kind {
            UnaryKind::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Tanh => xv.data().iter().map(|v| v.tanh()).collect(),
            UnaryKind::Relu => xv.data().iter().map(|&v| v.max(0.0)).collect(),
            UnaryKind::Neg => xv.data().iter().map(|v| -v).collect(),
            UnaryKind::Log => {
                if let Some((index, &value)) = xv.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        index,
                        value,
                    });
                }
                xv.data().iter().map(|v| v.ln()).collect()
            }
            UnaryKind::Clamp(lo, hi) => xv.data().iter().map(|v| v.clamp(lo, hi)).collect(),
        };
        if self.tracking_kinks() {
            let margin = match kind {
                UnaryKind::Relu => self.value(x).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min),
                UnaryKind::Clamp(lo, hi) => self
                    .value(x)
                    .data()
                    .iter()
                    .map(|v| (v - lo).abs().min((v - hi).abs()))
                    .fold(f64::INFINITY, f64::min),
                _ => f64::INFINITY,
            };
            self.note_kink(margin);
            let branches: Vec<u64> = match kind {
                UnaryKind::Relu => self.value(x).data().iter().map(|&v| u64::from(v > 0.0)).collect(),
                UnaryKind::Clamp(lo, hi) => self
                    .value(x)
                    .data()
                    .iter()
                    .map(|&v| u64::from(v > lo) + u64::from(v >= hi))
                    .collect(),
                _ => Vec::new(),
            };
            self.note_branches(branches);
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let name = match kind {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Relu => "relu",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
            UnaryKind::Clamp(..) => "clamp",
        };
        self.push(out, &[x], Op::Unary { kind, x }, name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryKind::Clamp(lo, hi), x)
    }

    /// Pointwise binary op. Operands must share a shape, or one of them must
    /// hold a single element, which is broadcast.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() || bv.numel() == 1 {
            av.shape().to_vec()
        } else if av.numel() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(Error::config(format!(
                "elementwise shape mismatch: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        let n: usize = shape.iter().product();
        let pick = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let data = (0..n).map(|i| f(pick(av, i), pick(bv, i))).collect();
        let out = Tensor::new(shape, data)?;
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        self.push(out, &[a, b], Op::Binary { kind, a, b }, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(out, &[x], Op::Scale { x, factor }, "scale")
    }

    /// Add a constant.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v + c).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(out, &[x], Op::Offset { x }, "add_scalar")
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, 1.0)
    }
}

pub(crate) fn unary_backward(tape: &mut Tape, out: Var, kind: UnaryKind, x: Var, g: &[f64]) {
    let xv = tape.value(x).data();
    let yv = tape.value(out).data();
    let d: Vec<f64> = match kind {
        UnaryKind::Sigmoid => yv.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect(),
        UnaryKind::Tanh => yv.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect(),
        UnaryKind::Relu => xv.iter().zip(g).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect(),
        UnaryKind::Log => xv.iter().zip(g).map(|(x, g)| g / x).collect(),
        UnaryKind::Neg => g.iter().map(|g| -g).collect(),
        UnaryKind::Clamp(lo, hi) => xv
            .iter()
            .zip(g)
            .map(|(x, g)| if *x > lo && *x < hi { *g } else { 0.0 })
            .collect(),
    };
    tape.accumulate(x, &d);
}

pub(crate) fn binary_backward(tape: &mut Tape, kind: BinaryKind, a: Var, b: Var, g: &[f64]) {
    let reduce = |full: Vec<f64>, target_len: usize| {
        if target_len == 1 && full.len() != 1 {
            vec![full.iter().sum()]
        } else {
            full
        }
    };
    let (av, bv) = (tape.value(a), tape.value(b));
    let pick = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
    let (da, db): (Vec<f64>, Vec<f64>) = match kind {
        BinaryKind::Add => (g.to_vec(), g.to_vec()),
        BinaryKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
        BinaryKind::Mul => (
            g.iter().enumerate().map(|(i, g)| g * pick(bv, i)).collect(),
            g.iter().enumerate().map(|(i, g)| g * pick(av, i)).collect(),
        ),
    };
    let (na, nb) = (av.numel(), bv.numel());
    let da = reduce(da, na);
    let db = reduce(db, nb);
    tape.accumulate(a, &da);
    tape.accumulate(b, &db);
}
