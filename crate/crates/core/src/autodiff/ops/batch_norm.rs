use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Op, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl RunningStats {
    /// Fresh statistics: mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: true,
        }
    }

    pub fn uninitialized(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![0.0; channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average toward the batch statistics. The stored
    /// variance is the unbiased estimate.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        let m = batch.count as f64;
        let correction = if batch.count > 1 { m / (m - 1.0) } else { 1.0 };
        if !self.initialized {
            self.mean.copy_from_slice(&batch.mean);
            self.var.iter_mut().zip(&batch.var).for_each(|(r, v)| *r = v * correction);
            self.initialized = true;
            return;
        }
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * batch.var[c] * correction;
        }
    }
}

/// Biased per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl Tape {
    /// Batch normalization over axis 1 of `x[N,C,...]`.
    ///
    /// Train mode normalizes with batch statistics and returns them so the
    /// caller can fold them into its running state; eval mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::config(format!("batch_norm expects rank >= 2, got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.channels() != c {
            return Err(Error::config(format!(
                "batch_norm parameter shapes do not match {c} channels"
            )));
        }
        let count = n * spatial;
        let xv = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::config(format!(
                        "batch_norm train mode needs N*H*W >= 2, got {count}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * spatial;
                        mean[ci] += xv[off..off + spatial].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * spatial;
                        var[ci] += xv[off..off + spatial].iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
            Mode::Eval => {
                if !running.initialized {
                    return Err(Error::State("batch_norm eval mode with uninitialized running statistics".into()));
                }
                (running.mean.clone(), running.var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (xv[i] - mean[ci]) * inv_std[ci];
                    out[i] = gv[ci] * xhat[i] + bv[ci];
                }
            }
        }
        let out = Tensor::new(s, out)?;
        let stats = (mode == Mode::Train).then_some(BatchStats { mean, var, count });
        let v = self.push(
            out,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            "batch_norm",
        )?;
        Ok((v, stats))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
    g: &[f64],
) {
    let s = tape.shape(x).to_vec();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let m = (n * spatial) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * spatial;
            for i in off..off + spatial {
                dgamma[ci] += g[i] * xhat[i];
                dbeta[ci] += g[i];
            }
        }
    }
    if tape.requires_grad(x) {
        let gv = tape.value(gamma).data();
        let mut dx = vec![0.0; g.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * spatial;
                let k = gv[ci] * inv_std[ci];
                for i in off..off + spatial {
                    dx[i] = if train {
                        k * (g[i] - dbeta[ci] / m - xhat[i] * dgamma[ci] / m)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        tape.accumulate(x, &dx);
    }
    tape.accumulate(gamma, &dgamma);
    tape.accumulate(beta, &dbeta);
}
