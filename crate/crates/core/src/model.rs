//! Encoder plus decoder head: the two model families and their variants.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Mode, Tape, Tensor, Var};
use crate::data::OrderingMode;
use crate::decoders::{IndependentHeadParams, LabelVector, LstmConfig, LstmDecoderParams};
use crate::encoder::{build_encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};

/// `a` predicts labels independently; `b1`/`b2` run the LSTM chain over
/// frequency-ascending or alphabetical label orderings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "a")]
    Independent,
    #[serde(rename = "b1")]
    ChainFrequency,
    #[serde(rename = "b2")]
    ChainAlphabetical,
}

impl ModelKind {
    pub fn is_chain(self) -> bool {
        !matches!(self, ModelKind::Independent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Independent => "a",
            ModelKind::ChainFrequency => "b1",
            ModelKind::ChainAlphabetical => "b2",
        }
    }

    /// Label ordering the model is trained under.
    pub fn ordering(self) -> OrderingMode {
        match self {
            ModelKind::Independent => OrderingMode::Schema,
            ModelKind::ChainFrequency => OrderingMode::FrequencyAscending,
            ModelKind::ChainAlphabetical => OrderingMode::Alphabetical,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(ModelKind::Independent),
            "b1" => Ok(ModelKind::ChainFrequency),
            "b2" => Ok(ModelKind::ChainAlphabetical),
            _ => Err(Error::config(format!("unknown model kind `{s}` (expected a, b1 or b2)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    /// LSTM state size; ignored by the independent model.
    pub lstm_hidden: usize,
    pub num_labels: usize,
}

impl ModelConfig {
    /// 512 px models with LSTM size 100, sized to nearly equal parameter counts.
    pub fn full_scale(kind: ModelKind, num_labels: usize) -> Self {
        let encoder = if kind.is_chain() {
            EncoderConfig::full_scale_chain()
        } else {
            EncoderConfig::full_scale_independent()
        };
        ModelConfig {
            kind,
            encoder,
            lstm_hidden: 100,
            num_labels,
        }
    }

    /// 64 px variants of [`ModelConfig::full_scale`] for CPU training.
    pub fn desk(kind: ModelKind, num_labels: usize) -> Self {
        let encoder = if kind.is_chain() {
            EncoderConfig::desk_chain()
        } else {
            EncoderConfig::desk_independent()
        };
        ModelConfig {
            kind,
            encoder,
            lstm_hidden: 16,
            num_labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_labels == 0 {
            return Err(Error::config("num_labels must be positive"));
        }
        if self.kind.is_chain() && self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden must be positive"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, t, h) = (self.encoder.encoded_dim(), self.num_labels, self.lstm_hidden);
        let head = if self.kind.is_chain() {
            4 * (d * h + h * h + h + h) + h + 1 + 2 * (d * h + h + h * h + h)
        } else {
            d * t + t
        };
        self.encoder.param_count() + head
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Independent(IndependentHeadParams),
    Chain(LstmDecoderParams),
}

impl Head {
    pub fn params(&self) -> &ParamSet {
        match self {
            Head::Independent(p) => p.params(),
            Head::Chain(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Head::Independent(p) => p.params_mut(),
            Head::Chain(p) => p.params_mut(),
        }
    }
}

/// Tape handles for every parameter of a [`Model`].
#[derive(Clone, Debug)]
pub struct ModelBound {
    pub encoder: Bound,
    pub head: Bound,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    labels: Vec<String>,
    encoder: EncoderParams,
    head: Head,
}

impl Model {
    /// Randomly initialized model; `labels` names the outputs in decoding order.
    pub fn build(config: ModelConfig, labels: Vec<String>, seed: u64) -> Result<Self> {
        Self::assemble(config, labels, seed, false)
    }

    /// Random encoder with an all-zero head, so every factor is exactly 0.5.
    pub fn zero_head(config: ModelConfig, labels: Vec<String>, seed: u64) -> Result<Self> {
        Self::assemble(config, labels, seed, true)
    }

    fn assemble(config: ModelConfig, labels: Vec<String>, seed: u64, zero: bool) -> Result<Self> {
        config.validate()?;
        if labels.len() != config.num_labels {
            return Err(Error::config(format!(
                "{} label names for {} outputs",
                labels.len(),
                config.num_labels
            )));
        }
        let encoder = build_encoder(&config.encoder, seed)?;
        let (d, t) = (encoder.encoded_dim(), config.num_labels);
        let head = match (config.kind.is_chain(), zero) {
            (false, false) => Head::Independent(IndependentHeadParams::new(d, t, seed)),
            (false, true) => Head::Independent(IndependentHeadParams::zeros(d, t)),
            (true, z) => {
                let lc = LstmConfig {
                    hidden: config.lstm_hidden,
                    num_labels: t,
                };
                Head::Chain(if z {
                    LstmDecoderParams::zeros(d, lc)
                } else {
                    LstmDecoderParams::new(d, lc, seed)
                })
            }
        };
        Ok(Model {
            config,
            labels,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut EncoderParams {
        &mut self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.head.params().param_count()
    }

    /// Encoder then head parameter sets.
    pub fn param_sets(&self) -> [&ParamSet; 2] {
        [self.encoder.params(), self.head.params()]
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParamSet; 2] {
        [self.encoder.params_mut(), self.head.params_mut()]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelBound> {
        Ok(ModelBound {
            encoder: self.encoder.params().bind(tape, trainable)?,
            head: self.head.params().bind(tape, trainable)?,
        })
    }

    fn check_labels(&self, labels: &[LabelVector], n: usize) -> Result<()> {
        if labels.len() != n || labels.iter().any(|l| l.len() != self.config.num_labels) {
            return Err(Error::config(format!(
                "expected {n} label vectors of length {}",
                self.config.num_labels
            )));
        }
        Ok(())
    }

    /// Factor means `[N,T]` on the tape: marginals for the independent model,
    /// teacher-forced conditionals for the chain. Also returns the batch-norm
    /// statistics when `mode` is train.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &ModelBound,
        images: Var,
        labels: &[LabelVector],
        mode: Mode,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let n = tape.shape(images).first().copied().unwrap_or(0);
        self.check_labels(labels, n)?;
        let (enc, stats) = self.encoder.encode(tape, &bound.encoder, images, mode)?;
        let m = match &self.head {
            Head::Independent(h) => h.decode(tape, &bound.head, enc)?,
            Head::Chain(h) => h.decode_teacher_forced(tape, &bound.head, enc, labels)?,
        };
        Ok((m, stats))
    }

    /// Eval-mode factor means for a batch of images with known labels.
    pub fn factor_means(&self, images: &Tensor, labels: &[LabelVector]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let (m, _) = self.forward(&mut tape, &bound, x, labels, Mode::Eval)?;
        Ok(tape.value(m).clone())
    }

    /// Eval-mode `(factors, decisions)`: the likelihood factors of `labels`
    /// and the probabilities behind the predicted labels. They coincide for
    /// the independent model; the chain shares one encoding between its
    /// teacher-forced and greedy passes.
    pub fn score_outputs(&self, images: &Tensor, labels: &[LabelVector]) -> Result<(Tensor, Tensor)> {
        let n = images.shape().first().copied().unwrap_or(0);
        self.check_labels(labels, n)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let (enc, _) = self.encoder.encode(&mut tape, &bound.encoder, x, Mode::Eval)?;
        match &self.head {
            Head::Independent(h) => {
                let m = h.decode(&mut tape, &bound.head, enc)?;
                let m = tape.value(m).clone();
                Ok((m.clone(), m))
            }
            Head::Chain(h) => {
                let f = h.decode_teacher_forced(&mut tape, &bound.head, enc, labels)?;
                let (_, d) = h.decode_greedy(&mut tape, &bound.head, enc)?;
                Ok((tape.value(f).clone(), tape.value(d).clone()))
            }
        }
    }

    /// Label predictions and the probabilities behind them. The independent
    /// model thresholds its marginals at 0.5; the chain decodes greedily.
    pub fn predict(&self, images: &Tensor) -> Result<(Vec<LabelVector>, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(images.clone())?;
        let (enc, _) = self.encoder.encode(&mut tape, &bound.encoder, x, Mode::Eval)?;
        match &self.head {
            Head::Independent(h) => {
                let m = h.decode(&mut tape, &bound.head, enc)?;
                let m = tape.value(m).clone();
                let t = self.config.num_labels;
                let labels = m
                    .data()
                    .chunks(t.max(1))
                    .map(|row| LabelVector::from_bools(row.iter().map(|p| *p > 0.5)))
                    .collect();
                Ok((labels, m))
            }
            Head::Chain(h) => {
                let (labels, m) = h.decode_greedy(&mut tape, &bound.head, enc)?;
                Ok((labels, tape.value(m).clone()))
            }
        }
    }
}
