//! Densely connected convolutional image encoder.
//!
//! Layout: a 7x7 stride-2 stem convolution and a 3x3 stride-2 max pool, then
//! `num_dense_blocks` DenseBlocks separated by TransitionBlocks, then global
//! average pooling down to one feature vector per image.
//!
//! * ConvBlock: batch norm -> relu -> 3x3 conv emitting `growth_rate`
//!   channels, whose output is concatenated onto the block's running input.
//! * TransitionBlock: batch norm -> relu -> 1x1 conv (with compression) ->
//!   2x2 average pool, stride 2.
//!
//! Convolutions carry no bias: each feeds a batch norm or the final pooled
//! output, and in train mode batch norm would cancel a bias exactly.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Mode, PoolKind, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamId, ParamSet};
use crate::rng::substream;

pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 2;
pub const STEM_POOL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Pixels per side of the square single-channel input.
    pub input_resolution: usize,
    /// Channels added by each ConvBlock.
    pub growth_rate: usize,
    pub num_dense_blocks: usize,
    pub convblocks_per_dense_block: usize,
    /// Output channels of the stem convolution.
    pub initial_channels: usize,
    /// Fraction of channels a TransitionBlock keeps, in `(0, 1]`.
    pub transition_compression: f64,
}

impl EncoderConfig {
    /// Wide-growth encoder for the independent-label model at full scale.
    pub fn full_scale_independent() -> Self {
        EncoderConfig {
            input_resolution: 512,
            growth_rate: 38,
            num_dense_blocks: 4,
            convblocks_per_dense_block: 3,
            initial_channels: 16,
            transition_compression: 0.55,
        }
    }

    /// Narrow-growth encoder for the LSTM-decoder model at full scale.
    pub fn full_scale_chain() -> Self {
        EncoderConfig {
            growth_rate: 19,
            transition_compression: 1.0,
            ..Self::full_scale_independent()
        }
    }

    /// 64x64 counterpart of [`Self::full_scale_independent`].
    pub fn desk_independent() -> Self {
        EncoderConfig {
            input_resolution: 64,
            growth_rate: 8,
            ..Self::full_scale_independent()
        }
    }

    /// 64x64 counterpart of [`Self::full_scale_chain`].
    pub fn desk_chain() -> Self {
        EncoderConfig {
            input_resolution: 64,
            growth_rate: 4,
            ..Self::full_scale_chain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_resolution", self.input_resolution),
            ("growth_rate", self.growth_rate),
            ("num_dense_blocks", self.num_dense_blocks),
            ("convblocks_per_dense_block", self.convblocks_per_dense_block),
            ("initial_channels", self.initial_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("encoder {name} must be positive")));
        }
        if !(self.transition_compression > 0.0 && self.transition_compression <= 1.0) {
            return Err(Error::config(format!(
                "transition_compression {} outside (0, 1]",
                self.transition_compression
            )));
        }
        // stem conv and max pool each halve; every transition halves again
        let divisor = 4usize
            .checked_shl(self.num_dense_blocks as u32 - 1)
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::config("too many dense blocks"))?;
        if !self.input_resolution.is_multiple_of(divisor) {
            return Err(Error::config(format!(
                "resolution {} must be divisible by {divisor} for {} dense blocks",
                self.input_resolution, self.num_dense_blocks
            )));
        }
        if self.plan().iter().any(|b| b.out_channels == 0) {
            return Err(Error::config("transition compression leaves zero channels"));
        }
        Ok(())
    }

    /// Channel and spatial bookkeeping per dense block.
    pub fn plan(&self) -> Vec<BlockPlan> {
        let mut channels = self.initial_channels;
        let mut side = self.input_resolution / 4;
        let mut plan = Vec::with_capacity(self.num_dense_blocks);
        for b in 0..self.num_dense_blocks {
            let in_channels = channels;
            let dense_out = in_channels + self.convblocks_per_dense_block * self.growth_rate;
            let last = b + 1 == self.num_dense_blocks;
            let out_channels = if last {
                dense_out
            } else {
                (dense_out as f64 * self.transition_compression).floor() as usize
            };
            plan.push(BlockPlan {
                in_channels,
                dense_out_channels: dense_out,
                out_channels,
                side,
                has_transition: !last,
            });
            channels = out_channels;
            if !last {
                side /= 2;
            }
        }
        plan
    }

    /// Length of the encoded vector.
    pub fn encoded_dim(&self) -> usize {
        self.plan().last().map_or(self.initial_channels, |b| b.dense_out_channels)
    }

    /// Closed-form learnable count for this layout.
    pub fn param_count(&self) -> usize {
        let k = self.growth_rate;
        let mut total = STEM_KERNEL * STEM_KERNEL * self.initial_channels;
        for b in self.plan() {
            for i in 0..self.convblocks_per_dense_block {
                let c = b.in_channels + i * k;
                total += 2 * c + 9 * c * k;
            }
            if b.has_transition {
                total += 2 * b.dense_out_channels + b.dense_out_channels * b.out_channels;
            }
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    pub in_channels: usize,
    pub dense_out_channels: usize,
    /// Channels after the transition (equal to `dense_out_channels` for the last block).
    pub out_channels: usize,
    /// Spatial side inside the dense block.
    pub side: usize,
    pub has_transition: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NormConv {
    gamma: ParamId,
    beta: ParamId,
    kernel: ParamId,
    /// Index into the running-statistics list.
    bn: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    params: ParamSet,
    stem: ParamId,
    conv_blocks: Vec<Vec<NormConv>>,
    transitions: Vec<Option<NormConv>>,
    running: Vec<RunningStats>,
}

/// Build an encoder with He-uniform convolution weights, unit gammas and
/// zero betas. Deterministic in `seed`.
pub fn build_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = substream(seed, "init/encoder");
    let mut params = ParamSet::new();
    let mut running = Vec::new();
    let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();

    let c0 = config.initial_channels;
    let stem = params.add(
        "encoder.stem.kernel",
        uniform(vec![c0, 1, STEM_KERNEL, STEM_KERNEL], he(STEM_KERNEL * STEM_KERNEL), &mut rng),
    );

    let mut norm_conv = |params: &mut ParamSet, prefix: String, c_in: usize, c_out: usize, k: usize| {
        let gamma = params.add(format!("{prefix}.gamma"), Tensor::ones(vec![c_in]));
        let beta = params.add(format!("{prefix}.beta"), Tensor::zeros(vec![c_in]));
        let kernel = params.add(
            format!("{prefix}.kernel"),
            uniform(vec![c_out, c_in, k, k], he(c_in * k * k), &mut rng),
        );
        running.push(RunningStats::new(c_in));
        NormConv {
            gamma,
            beta,
            kernel,
            bn: running.len() - 1,
        }
    };

    let mut conv_blocks = Vec::new();
    let mut transitions = Vec::new();
    for (b, plan) in config.plan().iter().enumerate() {
        let mut block = Vec::new();
        for i in 0..config.convblocks_per_dense_block {
            let c_in = plan.in_channels + i * config.growth_rate;
            block.push(norm_conv(
                &mut params,
                format!("encoder.dense{b}.conv{i}"),
                c_in,
                config.growth_rate,
                3,
            ));
        }
        conv_blocks.push(block);
        transitions.push(plan.has_transition.then(|| {
            norm_conv(
                &mut params,
                format!("encoder.transition{b}"),
                plan.dense_out_channels,
                plan.out_channels,
                1,
            )
        }));
    }
    Ok(EncoderParams {
        config: config.clone(),
        params,
        stem,
        conv_blocks,
        transitions,
        running,
    })
}

impl EncoderParams {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn encoded_dim(&self) -> usize {
        self.config.encoded_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Fold train-mode batch statistics (in forward order) into the running state.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(Error::usage(format!(
                "expected {} batch-norm statistics, got {}",
                self.running.len(),
                stats.len()
            )));
        }
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s, BN_MOMENTUM);
        }
        Ok(())
    }

    fn norm_relu_conv(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        nc: &NormConv,
        padding: usize,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let (y, s) = tape.batch_norm(
            x,
            bound.var(nc.gamma),
            bound.var(nc.beta),
            &self.running[nc.bn],
            mode,
            BN_EPS,
        )?;
        stats.extend(s);
        let y = tape.relu(y)?;
        tape.conv2d(y, bound.var(nc.kernel), None, 1, padding)
    }

    /// `images[N,1,R,R] -> x_enc[N, encoded_dim]`. In train mode also returns
    /// the batch statistics of every batch norm, in forward order.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, images: Var, mode: Mode) -> Result<(Var, Vec<BatchStats>)> {
        let r = self.config.input_resolution;
        let s = tape.shape(images);
        if s.len() != 4 || s[1] != 1 || s[2] != r || s[3] != r {
            return Err(Error::config(format!(
                "encoder expects images [N,1,{r},{r}], got {s:?}"
            )));
        }
        let mut stats = Vec::new();
        let x = tape.conv2d(images, bound.var(self.stem), None, STEM_STRIDE, STEM_KERNEL / 2)?;
        let mut x = tape.pool2d_padded(x, PoolKind::Max, STEM_POOL, 2, 1)?;
        for (block, transition) in self.conv_blocks.iter().zip(&self.transitions) {
            for nc in block {
                let y = self.norm_relu_conv(tape, bound, x, nc, 1, mode, &mut stats)?;
                x = tape.concat_channels(x, y)?;
            }
            if let Some(nc) = transition {
                let y = self.norm_relu_conv(tape, bound, x, nc, 0, mode, &mut stats)?;
                x = tape.pool2d(y, PoolKind::Avg, 2, 2)?;
            }
        }
        let enc = tape.global_avg_pool(x)?;
        Ok((enc, stats))
    }

    /// Eval-mode encoding outside of any training graph.
    pub fn encode_eval(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let (enc, _) = self.encode(&mut tape, &bound, x, Mode::Eval)?;
        Ok(tape.value(enc).clone())
    }
}
