//! Training loss and evaluation metrics for multi-label predictions.
//!
//! Means `m` are `[N,T]` tensors of per-label probabilities; labels are the
//! matching binary vectors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::decoders::{labels_to_tensor, LabelVector};
use crate::error::{Error, Result};

/// Probabilities are kept this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

pub const THRESHOLD: f64 = 0.5;

/// How the positive/negative weights of the cross-entropy are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// One pair of weights from all labels of the batch.
    #[default]
    Pooled,
    /// Separate weights for every class.
    PerClass,
}

fn weight_pair(pos: usize, neg: usize) -> Option<(f64, f64)> {
    if pos == 0 || neg == 0 {
        return None;
    }
    let total = (pos + neg) as f64;
    Some((total / pos as f64, total / neg as f64))
}

/// Per-entry weights `(beta_P * y, beta_N * (1 - y))` as `[N,T]` tensors.
/// A group without positives or without negatives gets weight 1 for both.
pub fn bce_weights(labels: &[LabelVector], weighting: Weighting) -> Result<(Tensor, Tensor)> {
    let y = labels_to_tensor(labels)?;
    let (n, t) = (labels.len(), y.shape()[1]);
    let pairs: Vec<(f64, f64)> = match weighting {
        Weighting::Pooled => {
            let pos = y.data().iter().filter(|v| **v == 1.0).count();
            let pair = weight_pair(pos, y.numel() - pos).unwrap_or_else(|| {
                log::warn!("batch has {pos} positives of {}; using unit weights", y.numel());
                (1.0, 1.0)
            });
            vec![pair; t]
        }
        Weighting::PerClass => (0..t)
            .map(|c| {
                let pos = (0..n).filter(|&i| y.at2(i, c) == 1.0).count();
                weight_pair(pos, n - pos).unwrap_or_else(|| {
                    log::warn!("class {c} has {pos} positives of {n}; using unit weights");
                    (1.0, 1.0)
                })
            })
            .collect(),
    };
    let mut wp = y.clone();
    let mut wn = y.clone();
    for i in 0..n {
        for c in 0..t {
            let k = i * t + c;
            let yv = y.data()[k];
            wp.data_mut()[k] = pairs[c].0 * yv;
            wn.data_mut()[k] = pairs[c].1 * (1.0 - yv);
        }
    }
    Ok((wp, wn))
}

fn check_shape(m: &[usize], labels: &[LabelVector]) -> Result<()> {
    let t = labels.first().map_or(0, LabelVector::len);
    if m.len() != 2 || m[0] != labels.len() || (!labels.is_empty() && m[1] != t) {
        return Err(Error::config(format!(
            "means {m:?} do not match {} label vectors of length {t}",
            labels.len()
        )));
    }
    Ok(())
}

/// `-(1/N) sum [wp log m + wn log(1 - m)]` on the tape.
pub fn weighted_bce(tape: &mut Tape, m: Var, labels: &[LabelVector], weighting: Weighting) -> Result<Var> {
    check_shape(tape.shape(m), labels)?;
    let (wp, wn) = bce_weights(labels, weighting)?;
    let n = labels.len() as f64;
    let mc = tape.clamp(m, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_m = tape.log(mc)?;
    let not_m = tape.one_minus(mc)?;
    let log_not_m = tape.log(not_m)?;
    let wp = tape.constant(wp)?;
    let wn = tape.constant(wn)?;
    let a = tape.mul(wp, log_m)?;
    let b = tape.mul(wn, log_not_m)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s)?;
    tape.scale(s, -1.0 / n)
}

/// `-log Bernoulli(y; m)` with the probability clamp.
pub fn bernoulli_nll(m: f64, y: bool) -> f64 {
    let m = m.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(if y { m } else { 1.0 - m }).ln()
}

/// Mean over examples of the summed per-label negative log-likelihood, in nats.
pub fn nll(m: &Tensor, labels: &[LabelVector]) -> Result<f64> {
    check_shape(m.shape(), labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let t = m.shape()[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (0..t).map(|c| bernoulli_nll(m.at2(i, c), l.get(c))).sum::<f64>())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mann-Whitney AUC from average ranks, so ties earn half credit.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Probabilistic DICE `2 sum(a b) / (sum a^2 + sum b^2)` per example,
/// averaged. An example where both vectors are zero scores 1.
pub fn dice(m: &Tensor, labels: &[LabelVector]) -> Result<f64> {
    check_shape(m.shape(), labels)?;
    if labels.is_empty() {
        return Ok(1.0);
    }
    let t = m.shape()[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for c in 0..t {
                let a = m.at2(i, c);
                let b = if l.get(c) { 1.0 } else { 0.0 };
                ab += a * b;
                aa += a * a;
                bb += b * b;
            }
            if aa + bb == 0.0 {
                1.0
            } else {
                2.0 * ab / (aa + bb)
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

impl Confusion {
    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Mean of sensitivity and specificity; a rate with nothing to count is 1.
    fn balanced(&self) -> f64 {
        let rate = |hit: usize, miss: usize| {
            if hit + miss == 0 {
                1.0
            } else {
                hit as f64 / (hit + miss) as f64
            }
        };
        (rate(self.tp, self.fn_) + rate(self.tn, self.fp)) / 2.0
    }
}

/// Per-example balanced accuracy at `threshold`, averaged over examples.
pub fn pess(m: &Tensor, labels: &[LabelVector], threshold: f64) -> Result<f64> {
    check_shape(m.shape(), labels)?;
    if labels.is_empty() {
        return Ok(1.0);
    }
    let t = m.shape()[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut c = Confusion::default();
            for k in 0..t {
                c.add(m.at2(i, k) > threshold, l.get(k));
            }
            c.balanced()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Per-class balanced accuracy pooled over examples, averaged over classes.
pub fn pcss(m: &Tensor, labels: &[LabelVector], threshold: f64) -> Result<f64> {
    check_shape(m.shape(), labels)?;
    let t = m.shape()[1];
    if t == 0 {
        return Ok(1.0);
    }
    let total: f64 = (0..t)
        .map(|k| {
            let mut c = Confusion::default();
            for (i, l) in labels.iter().enumerate() {
                c.add(m.at2(i, k) > threshold, l.get(k));
            }
            c.balanced()
        })
        .sum();
    Ok(total / t as f64)
}

/// AUC per class, absent for classes lacking positives or negatives.
pub fn auc_per_class(m: &Tensor, labels: &[LabelVector]) -> Result<Vec<Option<f64>>> {
    check_shape(m.shape(), labels)?;
    let t = m.shape()[1];
    (0..t)
        .map(|k| {
            let scores: Vec<f64> = (0..labels.len()).map(|i| m.at2(i, k)).collect();
            let truth: Vec<bool> = labels.iter().map(|l| l.get(k)).collect();
            match auc(&scores, &truth) {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `(label, auc)` in the active label order.
    pub per_class: Vec<(String, Option<f64>)>,
    /// Mean over the classes where AUC is defined.
    pub mean: Option<f64>,
}

impl AucReport {
    pub fn new(names: &[String], values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        AucReport {
            per_class: names.iter().cloned().zip(values).collect(),
            mean,
        }
    }
}

/// Metrics of one model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll: f64,
    /// Present only for models with tractable marginals.
    pub auc: Option<AucReport>,
    pub dice: f64,
    pub pess: f64,
    pub pcss: f64,
    pub threshold: f64,
    pub n: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl MetricsReport {
    /// `(key, value)` pairs in report order.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut out = vec![("nll".to_string(), self.nll.to_string())];
        if let Some(auc) = &self.auc {
            out.push(("auc_mean".into(), fmt_opt(auc.mean)));
            for (name, v) in &auc.per_class {
                out.push((format!("auc_{name}"), fmt_opt(*v)));
            }
        }
        out.push(("dice".into(), self.dice.to_string()));
        out.push(("pess".into(), self.pess.to_string()));
        out.push(("pcss".into(), self.pcss.to_string()));
        out.push(("threshold".into(), self.threshold.to_string()));
        out.push(("n".into(), self.n.to_string()));
        out
    }

    /// One `key=value` line per field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Header line plus one data row.
    pub fn to_csv(&self) -> Result<String> {
        let fields = self.fields();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(fields.iter().map(|(k, _)| k.as_str()))?;
        w.write_record(fields.iter().map(|(_, v)| v.as_str()))?;
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::config(format!("malformed report line `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_fields(pairs)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let row = r
            .records()
            .next()
            .ok_or_else(|| Error::config("report CSV has no data row"))??;
        Self::from_fields(header.iter().zip(row.iter()).map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }

    fn from_fields(pairs: Vec<(String, String)>) -> Result<Self> {
        let num = |key: &str, v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::config(format!("report field `{key}` is not a number: `{v}`")))
        };
        let opt = |key: &str, v: &str| if v == "NA" { Ok(None) } else { num(key, v).map(Some) };
        let (mut nll, mut dice, mut pess, mut pcss, mut threshold, mut n) = (None, None, None, None, None, None);
        let mut auc_mean = None;
        let mut per_class = Vec::new();
        for (k, v) in &pairs {
            match k.as_str() {
                "nll" => nll = Some(num(k, v)?),
                "auc_mean" => auc_mean = Some(opt(k, v)?),
                "dice" => dice = Some(num(k, v)?),
                "pess" => pess = Some(num(k, v)?),
                "pcss" => pcss = Some(num(k, v)?),
                "threshold" => threshold = Some(num(k, v)?),
                "n" => n = Some(v.parse::<usize>().map_err(|_| Error::config(format!("bad count `{v}`")))?),
                other => match other.strip_prefix("auc_") {
                    Some(name) => per_class.push((name.to_string(), opt(k, v)?)),
                    None => return Err(Error::config(format!("unknown report field `{other}`"))),
                },
            }
        }
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::config(format!("report lacks `{key}`")));
        Ok(MetricsReport {
            nll: need(nll, "nll")?,
            auc: auc_mean.map(|mean| AucReport { per_class, mean }),
            dice: need(dice, "dice")?,
            pess: need(pess, "pess")?,
            pcss: need(pcss, "pcss")?,
            threshold: need(threshold, "threshold")?,
            n: n.ok_or_else(|| Error::config("report lacks `n`"))?,
        })
    }
}

/// A report field usable for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nll,
    AucMean,
    Dice,
    Pess,
    Pcss,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Nll, Metric::AucMean, Metric::Dice, Metric::Pess, Metric::Pcss];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nll => "nll",
            Metric::AucMean => "auc_mean",
            Metric::Dice => "dice",
            Metric::Pess => "pess",
            Metric::Pcss => "pcss",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Nll)
    }

    /// Value in `report`, if the report carries it.
    pub fn value(self, report: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Nll => Some(report.nll),
            Metric::AucMean => report.auc.as_ref().and_then(|a| a.mean),
            Metric::Dice => Some(report.dice),
            Metric::Pess => Some(report.pess),
            Metric::Pcss => Some(report.pcss),
        }
    }

    /// Whether `candidate` strictly beats `best`.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        if self.higher_is_better() {
            candidate > best
        } else {
            candidate < best
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown metric `{s}`")))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests;
