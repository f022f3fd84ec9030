//! Images, labelled examples and datasets, plus ingestion, splitting,
//! augmentation, label ordering and the synthetic benchmark.

mod augment;
mod ingest;
mod ordering;
mod split;
mod synth;

pub use augment::{affine_transform, augment, AugmentParams};
pub use ingest::{area_resample, load_dataset, load_image, write_png, CHEST_XRAY_LABELS, NO_FINDING};
pub use ordering::{invert_permutation, order_labels, order_splits, OrderingMode};
pub use split::{split, split_assignment, SplitAssignment};
pub use synth::{
    conditional_entropy_bounds, read_synth_sidecar, synth_generate, write_synth_dir, EntropyBounds, SynthData,
    SynthLabel, SynthSidecar, SynthSpec, IMAGE_DIR, LABELS_FILE, MAX_SYNTH_LABELS, SIDECAR_FILE,
};

use crate::autodiff::Tensor;
use crate::decoders::LabelVector;
use crate::error::{Error, Result};

/// Square single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    side: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(side: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::config(format!(
                "{} pixels for a {side}x{side} image",
                pixels.len()
            )));
        }
        Ok(Image { side, pixels })
    }

    pub fn zeros(side: usize) -> Self {
        Image {
            side,
            pixels: vec![0.0; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.side + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: Image,
    pub labels: LabelVector,
}

/// Examples sharing one resolution and one label ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Label names in the active order.
    pub label_names: Vec<String>,
    /// Name of the ordering policy that produced `label_names`.
    pub ordering_id: String,
    pub resolution: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(label_names: Vec<String>, ordering_id: impl Into<String>, resolution: usize) -> Self {
        Dataset {
            label_names,
            ordering_id: ordering_id.into(),
            resolution,
            examples: Vec::new(),
        }
    }

    pub fn push(&mut self, example: Example) -> Result<()> {
        if example.image.side() != self.resolution || example.labels.len() != self.label_names.len() {
            return Err(Error::config(format!(
                "example `{}` does not fit a {}px dataset with {} labels",
                example.id,
                self.resolution,
                self.label_names.len()
            )));
        }
        self.examples.push(example);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    /// Positive count per label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels()];
        for e in &self.examples {
            for (c, &b) in counts.iter_mut().zip(e.labels.bits()) {
                *c += usize::from(b);
            }
        }
        counts
    }

    /// Same examples with labels rearranged so position `k` holds old label `perm[k]`.
    pub fn reorder(&self, perm: &[usize], ordering_id: impl Into<String>) -> Result<Dataset> {
        let mut seen = vec![false; self.num_labels()];
        if perm.len() != seen.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::config(format!("{perm:?} is not a permutation of {} labels", seen.len())));
        }
        Ok(Dataset {
            label_names: perm.iter().map(|&p| self.label_names[p].clone()).collect(),
            ordering_id: ordering_id.into(),
            resolution: self.resolution,
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    id: e.id.clone(),
                    image: e.image.clone(),
                    labels: e.labels.permuted(perm),
                })
                .collect(),
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            label_names: self.label_names.clone(),
            ordering_id: self.ordering_id.clone(),
            resolution: self.resolution,
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Images `[n,1,R,R]` and labels of the selected examples.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<LabelVector>)> {
        let images: Vec<&Image> = indices.iter().map(|&i| &self.examples[i].image).collect();
        let labels = indices.iter().map(|&i| self.examples[i].labels.clone()).collect();
        Ok((images_to_tensor(&images)?, labels))
    }
}

/// Stack equally sized images into an `[n,1,R,R]` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let side = images.first().map_or(0, |i| i.side());
    if images.iter().any(|i| i.side() != side) {
        return Err(Error::config("images of different sizes in one batch"));
    }
    let data = images.iter().flat_map(|i| i.pixels().iter().map(|&p| f64::from(p))).collect();
    Tensor::new(vec![images.len(), 1, side, side], data)
}
