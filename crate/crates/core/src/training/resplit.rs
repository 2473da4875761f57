use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices into the training pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified random train/validation partition of a labelled pool.
///
/// Each class contributes `round(n_c · val_fraction)` samples to validation
/// (kept below `n_c`); classes with fewer than two samples stay in train.
/// The draw is a pure function of `(seed, round)`.
pub fn resplit(labels: &[usize], val_fraction: f64, seed: u64, round: u64) -> Result<PoolSplit> {
    if labels.is_empty() {
        return Err(Error::Precondition("cannot split an empty pool".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    let mut split = PoolSplit {
        train: Vec::with_capacity(labels.len()),
        val: Vec::new(),
    };
    for (class, mut members) in by_class {
        if members.len() < 2 {
            log::warn!(
                "class {class} has {} sample(s); keeping it entirely in train",
                members.len()
            );
            split.train.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let n_val = ((members.len() as f64 * val_fraction).round() as usize).min(members.len() - 1);
        split.val.extend_from_slice(&members[..n_val]);
        split.train.extend_from_slice(&members[n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    Ok(split)
}
