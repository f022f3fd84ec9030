//! Synthetic images whose labels follow a small Bayesian network.
//!
//! Each label owns a rectangle of distinct intensity. The rectangle is drawn
//! when the label's *visibility* bit is set, and visibility equals the label
//! flipped with probability `rho`. The image therefore pins down visibility
//! exactly but the labels only up to that noise, leaving dependence between
//! labels that a joint model can exploit and a per-label model cannot.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{write_png, Dataset, Example, Image, OrderingMode};
use crate::decoders::LabelVector;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Larger label sets make the `2^T` joint enumeration impractical.
pub const MAX_SYNTH_LABELS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthLabel {
    pub name: String,
    /// Indices of earlier labels this one depends on.
    pub parents: Vec<usize>,
    /// `P(label = 1 | parents)`, indexed by the parent bits read as a
    /// binary number with the first parent most significant.
    pub cpt: Vec<f64>,
    /// `[x0, y0, x1, y1]` as fractions of the image side.
    pub rect: [f64; 4],
    pub intensity: f64,
    /// Probability that the drawn state disagrees with the label.
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub labels: Vec<SynthLabel>,
    pub resolution: usize,
}

impl SynthSpec {
    /// Five labels: Cardiomegaly -> Edema -> {Effusion, Consolidation},
    /// Nodule independent, noise 0.2, 64 px.
    pub fn default_five() -> Self {
        let label = |name: &str, parents: Vec<usize>, cpt: Vec<f64>, rect: [f64; 4], intensity: f64| SynthLabel {
            name: name.into(),
            parents,
            cpt,
            rect,
            intensity,
            rho: 0.2,
        };
        SynthSpec {
            labels: vec![
                label("Cardiomegaly", vec![], vec![0.5], [0.08, 0.08, 0.33, 0.33], 0.2),
                label("Edema", vec![0], vec![0.1, 0.9], [0.67, 0.08, 0.92, 0.33], 0.4),
                label("Effusion", vec![1], vec![0.1, 0.8], [0.375, 0.375, 0.625, 0.625], 0.6),
                label("Consolidation", vec![1], vec![0.2, 0.9], [0.08, 0.67, 0.33, 0.92], 0.8),
                label("Nodule", vec![], vec![0.5], [0.67, 0.67, 0.92, 0.92], 1.0),
            ],
            resolution: 64,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.labels.len();
        if t == 0 || t > MAX_SYNTH_LABELS {
            return Err(Error::config(format!(
                "synthetic specs need 1..={MAX_SYNTH_LABELS} labels, got {t}"
            )));
        }
        if self.resolution == 0 {
            return Err(Error::config("synthetic resolution must be positive"));
        }
        for (i, l) in self.labels.iter().enumerate() {
            let bad = |msg: String| Err(Error::config(format!("label `{}`: {msg}", l.name)));
            if let Some(&p) = l.parents.iter().find(|&&p| p >= i) {
                return bad(format!("parent {p} must precede the label (acyclic, topological order)"));
            }
            if l.cpt.len() != 1 << l.parents.len() {
                return bad(format!("{} CPT rows for {} parents", l.cpt.len(), l.parents.len()));
            }
            if l.cpt.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("CPT probabilities must lie in [0, 1]".into());
            }
            if !(0.0..0.5).contains(&l.rho) {
                return bad(format!("noise {} outside [0, 0.5)", l.rho));
            }
            let [x0, y0, x1, y1] = l.rect;
            if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
                return bad(format!("rectangle {:?} is not inside the unit square", l.rect));
            }
            if !(0.0..=1.0).contains(&l.intensity) {
                return bad(format!("intensity {} outside [0, 1]", l.intensity));
            }
        }
        Ok(())
    }

    fn p_one(&self, t: usize, bits: &[u8]) -> f64 {
        let l = &self.labels[t];
        let row = l.parents.iter().fold(0, |acc, &p| (acc << 1) | bits[p] as usize);
        l.cpt[row]
    }

    /// Exact `P(y)` for every state, indexed by [`LabelVector::state_index`].
    pub fn joint_table(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let t = self.num_labels();
        Ok((0..1usize << t)
            .map(|s| {
                let y = LabelVector::from_state_index(s, t);
                (0..t)
                    .map(|k| {
                        let p = self.p_one(k, y.bits());
                        if y.get(k) {
                            p
                        } else {
                            1.0 - p
                        }
                    })
                    .product()
            })
            .collect())
    }

    /// Draw the labels' rectangles whose visibility bit is set.
    pub fn render(&self, visible: &LabelVector) -> Image {
        let r = self.resolution;
        let mut img = Image::zeros(r);
        for (t, l) in self.labels.iter().enumerate() {
            if !visible.get(t) {
                continue;
            }
            let px = |f: f64| ((f * r as f64).floor() as usize).min(r);
            let [x0, y0, x1, y1] = l.rect;
            for y in px(y0)..px(y1) {
                for x in px(x0)..px(x1) {
                    img.pixels_mut()[y * r + x] = l.intensity as f32;
                }
            }
        }
        img
    }
}

/// A generated dataset plus its exact label distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    pub joint: Vec<f64>,
    /// Visibility pattern actually drawn for each example.
    pub visible: Vec<LabelVector>,
}

/// Sample `n` examples. The stream depends only on `(seed, n)`-independent
/// draws in example order, so a longer run extends a shorter one.
pub fn synth_generate(spec: &SynthSpec, n: usize, seed: u64) -> Result<SynthData> {
    let joint = spec.joint_table()?;
    let t = spec.num_labels();
    let mut rng = substream(seed, "synth");
    let mut dataset = Dataset::new(spec.label_names(), OrderingMode::Schema.id(), spec.resolution);
    let mut visible = Vec::with_capacity(n);
    for i in 0..n {
        let mut y = LabelVector::zeros(t);
        for k in 0..t {
            let p = spec.p_one(k, y.bits());
            y.set(k, rng.random_bool(p));
        }
        let mut v = y.clone();
        for (k, l) in spec.labels.iter().enumerate() {
            if rng.random_bool(l.rho) {
                v.set(k, !v.get(k));
            }
        }
        dataset.push(Example {
            id: format!("synth_{i:05}.png"),
            image: spec.render(&v),
            labels: y,
        })?;
        visible.push(v);
    }
    Ok(SynthData { dataset, joint, visible })
}

/// Expected per-example NLL floors, in nats, for a model that sees the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBounds {
    /// `H(Y | image)`: best any model of the joint can do.
    pub joint: f64,
    /// `sum_t H(Y_t | image)`: best any product of per-label marginals can do.
    pub marginal: f64,
}

/// Exact bounds by enumerating labels and visibility patterns. Assumes the
/// rendering is injective in the visibility pattern (distinct rectangles).
pub fn conditional_entropy_bounds(spec: &SynthSpec) -> Result<EntropyBounds> {
    let joint = spec.joint_table()?;
    let t = spec.num_labels();
    let states = 1usize << t;
    let rho: Vec<f64> = spec.labels.iter().map(|l| l.rho).collect();
    let (mut h_joint, mut h_marg) = (0.0, 0.0);
    let mut post = vec![0.0; states];
    let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    for v in 0..states {
        for (y, slot) in post.iter_mut().enumerate() {
            let lik: f64 = (0..t)
                .map(|k| {
                    let bit = 1 << (t - 1 - k);
                    if (v ^ y) & bit != 0 {
                        rho[k]
                    } else {
                        1.0 - rho[k]
                    }
                })
                .product();
            *slot = joint[y] * lik;
        }
        let p_v: f64 = post.iter().sum();
        if p_v == 0.0 {
            continue;
        }
        h_joint -= post.iter().map(|&p| plogp(p / p_v)).sum::<f64>() * p_v;
        for k in 0..t {
            let bit = 1 << (t - 1 - k);
            let m: f64 = post.iter().enumerate().filter(|(y, _)| y & bit != 0).map(|(_, p)| p).sum::<f64>() / p_v;
            h_marg -= (plogp(m) + plogp(1.0 - m)) * p_v;
        }
    }
    Ok(EntropyBounds {
        joint: h_joint,
        marginal: h_marg,
    })
}

/// Everything needed to audit a synthetic directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub spec: SynthSpec,
    pub seed: u64,
    pub n: usize,
    pub label_names: Vec<String>,
    pub joint: Vec<f64>,
    pub bounds: EntropyBounds,
}

pub const SIDECAR_FILE: &str = "synth.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const IMAGE_DIR: &str = "images";

/// Write `images/*.png`, `labels.csv` and `synth.json` under `dir`.
pub fn write_synth_dir(dir: &Path, spec: &SynthSpec, data: &SynthData, seed: u64) -> Result<()> {
    let io = |p: &Path, e: std::io::Error| Error::Io {
        path: p.to_path_buf(),
        source: e,
    };
    let images = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&images).map_err(|e| io(&images, e))?;
    let csv_path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["Image Index", "Finding Labels"])?;
    for e in &data.dataset.examples {
        write_png(&e.image, &images.join(&e.id))?;
        let names: Vec<&str> = (0..e.labels.len())
            .filter(|&t| e.labels.get(t))
            .map(|t| data.dataset.label_names[t].as_str())
            .collect();
        let findings = if names.is_empty() {
            super::NO_FINDING.to_string()
        } else {
            names.join("|")
        };
        w.write_record([e.id.as_str(), findings.as_str()])?;
    }
    w.flush().map_err(|e| io(&csv_path, e))?;
    let sidecar = SynthSidecar {
        spec: spec.clone(),
        seed,
        n: data.dataset.len(),
        label_names: spec.label_names(),
        joint: data.joint.clone(),
        bounds: conditional_entropy_bounds(spec)?,
    };
    let path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&path, json + "\n").map_err(|e| io(&path, e))
}

pub fn read_synth_sidecar(dir: &Path) -> Result<SynthSidecar> {
    let path = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
    Ok(serde_json::from_str(&text)?)
}
