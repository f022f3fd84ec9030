use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Result;

/// Policy deciding the order in which the chain decoder visits labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    /// Keep the order labels were declared in.
    Schema,
    /// Rarest training label first; ties alphabetical.
    FrequencyAscending,
    /// Case-insensitive by name.
    Alphabetical,
}

impl OrderingMode {
    pub fn id(self) -> &'static str {
        match self {
            OrderingMode::Schema => "schema",
            OrderingMode::FrequencyAscending => "frequency_ascending",
            OrderingMode::Alphabetical => "alphabetical",
        }
    }
}

/// Permutation `perm` with `perm[k]` the index of the label placed at position `k`.
/// `train_counts` must come from the training split only.
pub fn order_labels(names: &[String], train_counts: &[usize], mode: OrderingMode) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..names.len()).collect();
    let key = |i: usize| (names[i].to_lowercase(), i);
    match mode {
        OrderingMode::Schema => {}
        OrderingMode::Alphabetical => perm.sort_by_key(|&i| key(i)),
        OrderingMode::FrequencyAscending => perm.sort_by_key(|&i| (train_counts[i], key(i))),
    }
    perm
}

/// Reorder a `[train, val, test]` triple under `mode`, counting label
/// frequencies on the training split only.
pub fn order_splits(splits: [&Dataset; 3], mode: OrderingMode) -> Result<[Dataset; 3]> {
    let [train, val, test] = splits;
    let perm = order_labels(&train.label_names, &train.label_counts(), mode);
    Ok([
        train.reorder(&perm, mode.id())?,
        val.reorder(&perm, mode.id())?,
        test.reorder(&perm, mode.id())?,
    ])
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}
