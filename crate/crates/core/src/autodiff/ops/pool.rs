use crate::autodiff::tape::{Op, PoolGeom, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolGeom {
    /// Valid (non-padding) input rows/columns covered by output cell `(oy, ox)`.
    fn window(&self, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let y0 = (oy * self.stride) as isize - self.padding as isize;
        let x0 = (ox * self.stride) as isize - self.padding as isize;
        let clip = |lo: isize, len: usize| {
            let a = lo.max(0) as usize;
            let b = ((lo + self.window as isize).max(0) as usize).min(len);
            a..b
        };
        (clip(y0, self.h), clip(x0, self.w))
    }
}

impl Tape {
    pub fn pool2d(&mut self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        self.pool2d_padded(input, kind, window, stride, 0)
    }

    /// Pooling with implicit padding; padded cells never win a max and are
    /// not counted in an average.
    pub fn pool2d_padded(
        &mut self,
        input: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 4 {
            return Err(Error::config(format!("pool2d expects rank 4, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if window == 0 || stride == 0 {
            return Err(Error::config("pool2d window and stride must be positive"));
        }
        if padding >= window {
            return Err(Error::config("pool2d padding must be smaller than the window"));
        }
        if window > h + 2 * padding || window > w + 2 * padding {
            return Err(Error::config(format!(
                "pool2d window {window} larger than input {h}x{w} (padding {padding})"
            )));
        }
        let geom = PoolGeom {
            n,
            c,
            h,
            w,
            window,
            stride,
            padding,
            oh: (h + 2 * padding - window) / stride + 1,
            ow: (w + 2 * padding - window) / stride + 1,
        };
        let x = self.value(input).data();
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * geom.oh * geom.ow);
        match kind {
            PoolKind::Max => {
                let track = self.tracking_kinks();
                let mut argmax = Vec::with_capacity(out.capacity());
                let mut margin = f64::INFINITY;
                for p in 0..planes {
                    let base = p * h * w;
                    for oy in 0..geom.oh {
                        for ox in 0..geom.ow {
                            let (rows, cols) = geom.window(oy, ox);
                            let mut best = base + rows.start * w + cols.start;
                            let mut second = f64::NEG_INFINITY;
                            for y in rows.clone() {
                                for xx in cols.clone() {
                                    let idx = base + y * w + xx;
                                    if idx == best {
                                        continue;
                                    }
                                    // strict comparison keeps the lowest flat index on ties
                                    if x[idx] > x[best] {
                                        second = second.max(x[best]);
                                        best = idx;
                                    } else {
                                        second = second.max(x[idx]);
                                    }
                                }
                            }
                            if track {
                                margin = margin.min(x[best] - second);
                            }
                            out.push(x[best]);
                            argmax.push(best);
                        }
                    }
                }
                let out = Tensor::new(vec![n, c, geom.oh, geom.ow], out)?;
                if track {
                    self.note_kink(margin);
                    self.note_branches(argmax.iter().map(|&a| a as u64));
                }
                self.push(out, &[input], Op::MaxPool { input, argmax }, "max_pool")
            }
            PoolKind::Avg => {
                for p in 0..planes {
                    let base = p * h * w;
                    for oy in 0..geom.oh {
                        for ox in 0..geom.ow {
                            let (rows, cols) = geom.window(oy, ox);
                            let count = rows.len() * cols.len();
                            let mut sum = 0.0;
                            for y in rows {
                                sum += x[base + y * w + cols.start..base + y * w + cols.end].iter().sum::<f64>();
                            }
                            out.push(sum / count as f64);
                        }
                    }
                }
                let out = Tensor::new(vec![n, c, geom.oh, geom.ow], out)?;
                self.push(out, &[input], Op::AvgPool { input, geom }, "avg_pool")
            }
        }
    }

    /// Mean over the spatial dimensions: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::config(format!("global_avg_pool expects non-empty rank 4, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let out: Vec<f64> = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new(vec![n, c], out)?;
        self.push(out, &[input], Op::GlobalAvgPool { input }, "global_avg_pool")
    }
}

pub(crate) fn avg_backward(tape: &mut Tape, input: Var, geom: &PoolGeom, g: &[f64]) {
    let (h, w) = (geom.h, geom.w);
    let mut d = vec![0.0; geom.n * geom.c * h * w];
    let mut o = 0;
    for p in 0..geom.n * geom.c {
        let base = p * h * w;
        for oy in 0..geom.oh {
            for ox in 0..geom.ow {
                let (rows, cols) = geom.window(oy, ox);
                let share = g[o] / (rows.len() * cols.len()) as f64;
                for y in rows {
                    for v in &mut d[base + y * w + cols.start..base + y * w + cols.end] {
                        *v += share;
                    }
                }
                o += 1;
            }
        }
    }
    tape.accumulate(input, &d);
}
