use crate::autodiff::gemm::gemm;
use crate::autodiff::tape::{Op, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

impl Tape {
    /// `x[N,D] · w[D,M] + b[M]`, with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::config(format!(
                "affine dimension mismatch: x {xs:?}, w {ws:?}"
            )));
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::config(format!(
                    "affine bias shape {:?}, expected [{m}]",
                    self.shape(b)
                )));
            }
        }
        let mut out = vec![0.0; n * m];
        gemm(n, d, m, self.value(x).data(), false, self.value(w).data(), false, 0.0, &mut out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(m.max(1)) {
                row.iter_mut().zip(bias).for_each(|(v, bv)| *v += bv);
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, &inputs, Op::Affine { x, w, b }, "affine")
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }
}

pub(crate) fn affine_backward(tape: &mut Tape, x: Var, w: Var, b: Option<Var>, g: &[f64]) {
    let (n, d) = (tape.shape(x)[0], tape.shape(x)[1]);
    let m = tape.shape(w)[1];
    if tape.requires_grad(x) {
        let mut dx = vec![0.0; n * d];
        gemm(n, m, d, g, false, tape.value(w).data(), true, 0.0, &mut dx);
        tape.accumulate(x, &dx);
    }
    if tape.requires_grad(w) {
        let mut dw = vec![0.0; d * m];
        gemm(d, n, m, tape.value(x).data(), true, g, false, 0.0, &mut dw);
        tape.accumulate(w, &dw);
    }
    if let Some(b) = b {
        let mut db = vec![0.0; m];
        for row in g.chunks(m.max(1)) {
            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        tape.accumulate(b, &db);
    }
}
