//! In-set / out-of-set assignments and the resulting sample partitions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Partition};
use crate::error::{Error, Result};

/// Face-editing classes T0-T18; T0 is the unedited reconstruction.
pub const FACE_EDIT_CLASSES: [&str; 19] = [
    "None",
    "Smile",
    "Not_smile",
    "Old",
    "Young",
    "Angry",
    "Surprised",
    "Afro",
    "Purple_hair",
    "Curly_hair",
    "Mohawk",
    "Bobcut",
    "Bowlcut",
    "Taylor_swift",
    "Beyonce",
    "Hilary_clinton",
    "Trump",
    "Zuckerberg",
    "Depp",
];

/// Generator architectures for attribution splits, in label order.
pub const ATTRIBUTION_CLASSES: [&str; 5] = [
    "StyleGAN2",
    "StyleGAN3",
    "TamingTransformer",
    "LatentDiffusion",
    "LSGM",
];

/// G0-G4 as (in-set, out-of-set) in listing order.
const FACE_SPLITS: [(&[usize], &[usize]); 5] = [
    (&[0, 2, 3, 5, 6, 7, 8, 9, 13, 14, 15], &[1, 4, 10, 11, 12, 16, 17, 18]),
    (&[0, 1, 2, 5, 6, 13, 14, 15, 16, 17, 18], &[4, 3, 7, 8, 9, 10, 11, 12]),
    (&[0, 1, 2, 5, 6, 7, 8, 9, 10, 11, 12], &[4, 3, 13, 14, 15, 16, 17, 18]),
    (&[0, 1, 2, 3, 4, 11, 12, 13, 14, 15, 18], &[5, 6, 7, 8, 9, 10, 16, 17]),
    (&[0, 1, 3, 4, 6, 10, 12, 15, 16, 17, 18], &[2, 5, 7, 8, 9, 11, 13, 14]),
];

/// S1-S4 over [`ATTRIBUTION_CLASSES`].
const ATTRIBUTION_SPLITS: [(&[usize], &[usize]); 4] = [
    (&[4, 0, 2], &[1, 3]),
    (&[0, 1, 3], &[4, 2]),
    (&[4, 0, 1], &[2, 3]),
    (&[4, 0, 3], &[1, 2]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub name: String,
    pub in_set: Vec<usize>,
    pub out_of_set: Vec<usize>,
}

impl SplitConfig {
    /// Named configurations: `G0`-`G9` over [`FACE_EDIT_CLASSES`] and
    /// `S1`-`S4` over [`ATTRIBUTION_CLASSES`]. G5-G9 swap the first in-set and
    /// first out-of-set type of G0-G4, moving the unedited class out of set.
    pub fn builtin(name: &str) -> Option<SplitConfig> {
        let make = |inn: &[usize], out: &[usize]| SplitConfig {
            name: name.to_string(),
            in_set: inn.to_vec(),
            out_of_set: out.to_vec(),
        };
        let (prefix, idx) = name.split_at(1);
        let idx: usize = idx.parse().ok()?;
        match prefix {
            "G" if idx < 5 => Some(make(FACE_SPLITS[idx].0, FACE_SPLITS[idx].1)),
            "G" if idx < 10 => {
                let (inn, out) = FACE_SPLITS[idx - 5];
                let mut cfg = make(inn, out);
                std::mem::swap(&mut cfg.in_set[0], &mut cfg.out_of_set[0]);
                Some(cfg)
            }
            "S" if (1..=4).contains(&idx) => {
                let (inn, out) = ATTRIBUTION_SPLITS[idx - 1];
                Some(make(inn, out))
            }
            _ => None,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.in_set.is_empty() {
            problems.push("in_set must not be empty".to_string());
        }
        for (field, ids) in [("in_set", &self.in_set), ("out_of_set", &self.out_of_set)] {
            let mut seen = BTreeSet::new();
            for &id in ids {
                if id >= num_classes {
                    problems.push(format!(
                        "{field}: class {id} is absent from the dataset ({num_classes} classes)"
                    ));
                }
                if !seen.insert(id) {
                    problems.push(format!("{field}: class {id} listed twice"));
                }
            }
        }
        let inn: BTreeSet<_> = self.in_set.iter().collect();
        for id in &self.out_of_set {
            if inn.contains(id) {
                problems.push(format!("class {id} is both in-set and out-of-set"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("split {}: {}", self.name, problems.join("; "))))
        }
    }

    /// In-set ids in ascending order; position = remapped closed-set label.
    pub fn closed_classes(&self) -> Vec<usize> {
        let mut ids = self.in_set.clone();
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSample {
    /// Index into the manifest's sample list.
    pub index: usize,
    pub original_label: usize,
    /// Contiguous closed-set label; `None` for out-of-set samples.
    pub label: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub name: String,
    /// Original ids of the closed-set classes, ordered by remapped label.
    pub closed_classes: Vec<usize>,
    pub closed_train: Vec<SplitSample>,
    pub closed_test: Vec<SplitSample>,
    pub open_test: Vec<SplitSample>,
}

impl DataSplit {
    pub fn num_classes(&self) -> usize {
        self.closed_classes.len()
    }
}

/// Partitions a manifest into closed-set train/test and open-set test.
/// Out-of-set classes only ever appear in `open_test`.
pub fn make_split(manifest: &DatasetManifest, cfg: &SplitConfig) -> Result<DataSplit> {
    cfg.validate(manifest.num_classes())?;
    let closed_classes = cfg.closed_classes();
    let remap = |id: usize| closed_classes.iter().position(|&c| c == id);
    let out: BTreeSet<usize> = cfg.out_of_set.iter().copied().collect();
    let mut split = DataSplit {
        name: cfg.name.clone(),
        closed_classes: closed_classes.clone(),
        closed_train: Vec::new(),
        closed_test: Vec::new(),
        open_test: Vec::new(),
    };
    for (index, s) in manifest.samples.iter().enumerate() {
        let sample = SplitSample {
            index,
            original_label: s.label_id,
            label: remap(s.label_id),
        };
        match (sample.label, s.partition) {
            (Some(_), Partition::Train) => split.closed_train.push(sample),
            (Some(_), Partition::Test) => split.closed_test.push(sample),
            (None, Partition::Test) if out.contains(&s.label_id) => split.open_test.push(sample),
            _ => {}
        }
    }
    if split.open_test.is_empty() {
        log::warn!("split {}: no out-of-set test samples; open-set metrics are undefined", cfg.name);
    }
    Ok(split)
}
