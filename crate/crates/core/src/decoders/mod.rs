//! Label-prediction heads on top of the encoded image vector.

mod independent;
mod lstm;

pub use independent::{decode_independent, IndependentHeadParams};
pub use lstm::{Gate, LstmConfig, LstmDecoderParams, StepState};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Binary presence vector over `T` labels in the active ordering.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelVector {
    bits: Vec<u8>,
}

impl LabelVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|b| *b > 1) {
            return Err(Error::config(format!(
                "label bit {i} is {}, expected 0 or 1",
                bits[i]
            )));
        }
        Ok(LabelVector { bits })
    }

    pub fn zeros(len: usize) -> Self {
        LabelVector { bits: vec![0; len] }
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        LabelVector {
            bits: bits.into_iter().map(u8::from).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.bits[t] == 1
    }

    pub fn set(&mut self, t: usize, value: bool) {
        self.bits[t] = u8::from(value);
    }

    /// Reorder so that position `i` holds the old position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        LabelVector {
            bits: perm.iter().map(|&p| self.bits[p]).collect(),
        }
    }

    /// Row index into an enumeration of `2^T` states, bit `t` most significant first.
    pub fn state_index(&self) -> usize {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn from_state_index(index: usize, len: usize) -> Self {
        LabelVector {
            bits: (0..len).map(|t| ((index >> (len - 1 - t)) & 1) as u8).collect(),
        }
    }
}

/// Stack label vectors into an `[N,T]` tensor of 0/1 values.
pub fn labels_to_tensor(labels: &[LabelVector]) -> Result<Tensor> {
    let t = labels.first().map_or(0, LabelVector::len);
    if labels.iter().any(|l| l.len() != t) {
        return Err(Error::config("label vectors of unequal length"));
    }
    let data = labels.iter().flat_map(|l| l.bits.iter().map(|&b| f64::from(b))).collect();
    Tensor::new(vec![labels.len(), t], data)
}
