use crate::autodiff::tape::{Op, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// `(outer, inner)` block sizes for an axis-1 split of `shape`.
fn axis1_blocks(shape: &[usize]) -> (usize, usize) {
    let outer = shape[0];
    let rest: usize = shape[2..].iter().product();
    (outer, rest)
}

impl Tape {
    /// Concatenate along axis 1 (channels). All other dimensions must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::config(format!(
                "concat_channels shape mismatch: {sa:?} vs {sb:?}"
            )));
        }
        let (outer, rest) = axis1_blocks(sa);
        let (ca, cb) = (sa[1] * rest, sb[1] * rest);
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(outer * (ca + cb));
        for o in 0..outer {
            data.extend_from_slice(&av[o * ca..(o + 1) * ca]);
            data.extend_from_slice(&bv[o * cb..(o + 1) * cb]);
        }
        let out = Tensor::new(shape, data)?;
        self.push(out, &[a, b], Op::Concat { a, b }, "concat")
    }

    /// Concatenate several tensors along axis 1, in order.
    pub fn concat_many(&mut self, parts: &[Var]) -> Result<Var> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::config("concat_many needs at least one input"))?;
        rest.iter().try_fold(*first, |acc, &p| self.concat_channels(acc, p))
    }

    /// Channels `start..start + len` along axis 1.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 || start + len > s[1] {
            return Err(Error::config(format!(
                "slice {start}..{} out of range for shape {s:?}",
                start + len
            )));
        }
        let (outer, rest) = axis1_blocks(s);
        let c = s[1] * rest;
        let mut shape = s.to_vec();
        shape[1] = len;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * rest);
        for o in 0..outer {
            data.extend_from_slice(&xv[o * c + start * rest..o * c + (start + len) * rest]);
        }
        let out = Tensor::new(shape, data)?;
        self.push(out, &[x], Op::Slice { x, start }, "slice")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, &[x], Op::Reshape { x }, "reshape")
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum { x }, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::config("mean of an empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }
}

pub(crate) fn concat_backward(tape: &mut Tape, a: Var, b: Var, g: &[f64]) {
    let (outer, rest) = axis1_blocks(tape.shape(a));
    let ca = tape.shape(a)[1] * rest;
    let cb = tape.shape(b)[1] * rest;
    let mut da = Vec::with_capacity(outer * ca);
    let mut db = Vec::with_capacity(outer * cb);
    for o in 0..outer {
        let row = &g[o * (ca + cb)..(o + 1) * (ca + cb)];
        da.extend_from_slice(&row[..ca]);
        db.extend_from_slice(&row[ca..]);
    }
    tape.accumulate(a, &da);
    tape.accumulate(b, &db);
}

pub(crate) fn slice_backward(tape: &mut Tape, out: Var, x: Var, start: usize, g: &[f64]) {
    let s = tape.shape(x);
    let (outer, rest) = axis1_blocks(s);
    let c = s[1] * rest;
    let len = tape.shape(out)[1] * rest;
    let mut d = vec![0.0; outer * c];
    for o in 0..outer {
        let off = o * c + start * rest;
        d[off..off + len].copy_from_slice(&g[o * len..(o + 1) * len]);
    }
    tape.accumulate(x, &d);
}
