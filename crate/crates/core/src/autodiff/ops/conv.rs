use crate::autodiff::gemm::gemm;
use crate::autodiff::tape::{ConvGeom, Op, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

impl Tape {
    /// 2-D cross-correlation of `input[N,C,H,W]` with `kernels[F,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (is, ks) = (self.shape(input), self.shape(kernels));
        if is.len() != 4 || ks.len() != 4 {
            return Err(Error::config(format!(
                "conv2d expects rank-4 input and kernels, got {is:?} and {ks:?}"
            )));
        }
        let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
        let (f, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(Error::config(format!(
                "conv2d channel mismatch: input has {c}, kernels expect {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::config(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::config(format!(
                    "conv2d bias shape {:?}, expected [{f}]",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let out = forward(self.value(input).data(), self.value(kernels).data(), bias.map(|b| self.value(b).data()), &geom);
        let out = Tensor::new(vec![n, f, geom.oh, geom.ow], out)?;
        let mut inputs = vec![input, kernels];
        inputs.extend(bias);
        self.push(
            out,
            &inputs,
            Op::Conv2d {
                input,
                kernel: kernels,
                bias,
                geom,
            },
            "conv2d",
        )
    }
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 stride-1 unpadded convolution: the image already is its column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - padding` lies
/// inside the image.
fn valid_cols(g: &ConvGeom, kj: usize) -> std::ops::Range<usize> {
    let lo = g.padding.saturating_sub(kj).div_ceil(g.stride);
    let hi = if g.w + g.padding > kj {
        ((g.w + g.padding - kj - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    lo.min(hi)..hi
}

/// Stride 1 with `ow == w`: each column-matrix row is the input plane
/// shifted by a constant offset, apart from wrapped edge columns.
fn is_same_size(g: &ConvGeom) -> bool {
    g.stride == 1 && g.ow == g.w && g.oh == g.h
}

/// Flat shift `d` with `src = dst + d`, and the `dst` range whose source
/// lies inside the plane.
fn shifted_block(g: &ConvGeom, ki: usize, kj: usize) -> (isize, std::ops::Range<usize>) {
    let d = (ki as isize - g.padding as isize) * g.w as isize + kj as isize - g.padding as isize;
    let n = (g.h * g.w) as isize;
    let lo = (-d).clamp(0, n) as usize;
    let hi = (n - d).clamp(0, n) as usize;
    (d, lo..hi.max(lo))
}

/// Zero the entries of one column-matrix row that a shifted block copy
/// filled from a wrapped neighbouring row.
fn zero_invalid(g: &ConvGeom, kj: usize, dst: &mut [f64]) {
    let valid = valid_cols(g, kj);
    if valid.start == 0 && valid.end == g.ow {
        return;
    }
    for line in dst.chunks_mut(g.ow) {
        line[..valid.start].fill(0.0);
        line[valid.end..].fill(0.0);
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ohw = g.col_cols();
    let pad = g.padding as isize;
    if is_same_size(g) {
        for ci in 0..g.c {
            let plane = &x[ci * ohw..(ci + 1) * ohw];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    let (d, block) = shifted_block(g, ki, kj);
                    dst[..block.start].fill(0.0);
                    dst[block.end..].fill(0.0);
                    if !block.is_empty() {
                        let src = (block.start as isize + d) as usize;
                        dst[block.clone()].copy_from_slice(&plane[src..src + block.len()]);
                    }
                    zero_invalid(g, kj, dst);
                }
            }
        }
        return;
    }
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let valid = valid_cols(g, kj);
                let x0 = (valid.start * g.stride + kj) as isize - pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..valid.start].fill(0.0);
                    line[valid.end..].fill(0.0);
                    let inner = &mut line[valid.clone()];
                    if inner.is_empty() {
                        continue;
                    }
                    let x0 = x0 as usize;
                    if g.stride == 1 {
                        inner.copy_from_slice(&src[x0..x0 + inner.len()]);
                    } else {
                        for (v, s) in inner.iter_mut().zip(src[x0..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto the input planes. `cols` is used
/// as scratch.
fn col2im_add(cols: &mut [f64], g: &ConvGeom, dx: &mut [f64]) {
    let ohw = g.col_cols();
    let pad = g.padding as isize;
    if is_same_size(g) {
        for ci in 0..g.c {
            let plane = &mut dx[ci * ohw..(ci + 1) * ohw];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let src = &mut cols[row * ohw..(row + 1) * ohw];
                    zero_invalid(g, kj, src);
                    let (d, block) = shifted_block(g, ki, kj);
                    if block.is_empty() {
                        continue;
                    }
                    let start = (block.start as isize + d) as usize;
                    for (o, v) in plane[start..start + block.len()].iter_mut().zip(&src[block]) {
                        *o += v;
                    }
                }
            }
        }
        return;
    }
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let valid = valid_cols(g, kj);
                if valid.is_empty() {
                    continue;
                }
                let x0 = ((valid.start * g.stride + kj) as isize - pad) as usize;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow + valid.start..oy * g.ow + valid.end];
                    for (d, s) in dst[x0..].iter_mut().step_by(g.stride).zip(line) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (rows, ohw) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.f * ohw;
    let mut out = vec![0.0; g.n * out_sz];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * ohw] };
    for n in 0..g.n {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let on = &mut out[n * out_sz..(n + 1) * out_sz];
        let cm: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(g.f, rows, ohw, k, false, cm, false, 0.0, on);
        if let Some(b) = bias {
            for (fi, chunk) in on.chunks_mut(ohw).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[fi]);
            }
        }
    }
    out
}

pub(crate) fn backward(tape: &mut Tape, input: Var, kernel: Var, bias: Option<Var>, g: &ConvGeom, grad: &[f64]) {
    let need_x = tape.requires_grad(input);
    let need_k = tape.requires_grad(kernel);
    let (rows, ohw) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.f * ohw;

    let (dx, dk) = {
        let x = tape.value(input).data();
        let k = tape.value(kernel).data();
        let mut dx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
        let mut dk = if need_k { vec![0.0; k.len()] } else { Vec::new() };
        let mut cols = vec![0.0; rows * ohw];
        for n in 0..g.n {
            let gn = &grad[n * out_sz..(n + 1) * out_sz];
            if need_k {
                let xn = &x[n * in_sz..(n + 1) * in_sz];
                let cm: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, g, &mut cols);
                    &cols
                };
                gemm(g.f, ohw, rows, gn, false, cm, true, 1.0, &mut dk);
            }
            if need_x {
                let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
                if g.is_pointwise() {
                    gemm(rows, g.f, ohw, k, true, gn, false, 1.0, dxn);
                } else {
                    gemm(rows, g.f, ohw, k, true, gn, false, 0.0, &mut cols);
                    col2im_add(&mut cols, g, dxn);
                }
            }
        }
        (dx, dk)
    };
    if need_x {
        tape.accumulate(input, &dx);
    }
    if need_k {
        tape.accumulate(kernel, &dk);
    }
    if let Some(b) = bias {
        let mut db = vec![0.0; g.f];
        for n in 0..g.n {
            for (fi, chunk) in grad[n * out_sz..(n + 1) * out_sz].chunks(ohw).enumerate() {
                db[fi] += chunk.iter().sum::<f64>();
            }
        }
        tape.accumulate(b, &db);
    }
}
