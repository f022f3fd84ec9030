use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::substream;

pub const TRAIN_FRACTION: f64 = 0.7;
pub const VAL_FRACTION: f64 = 0.1;

/// Example indices of each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random 70/10/20 partition of `0..n`; the test split takes the rounding remainder.
pub fn split_assignment(n: usize, seed: u64) -> SplitAssignment {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split"));
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = ((n as f64 * VAL_FRACTION).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    SplitAssignment {
        seed,
        train: order,
        val,
        test,
    }
}

pub fn split(dataset: &Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let a = split_assignment(dataset.len(), seed);
    (dataset.subset(&a.train), dataset.subset(&a.val), dataset.subset(&a.test))
}
