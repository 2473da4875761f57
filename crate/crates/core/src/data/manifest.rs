use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    pub label_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub partition: Partition,
}

/// On-disk dataset description; `class_names[i]` names label `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Every violation of the schema invariants, in manifest order.
    pub fn violations(&self, check_files: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.version.trim().is_empty() {
            out.push("version: must not be empty".to_string());
        }
        if self.class_names.is_empty() {
            out.push("class_names: must list at least one class".to_string());
        }
        let mut seen = BTreeSet::new();
        for (i, name) in self.class_names.iter().enumerate() {
            if !seen.insert(name) {
                out.push(format!("class_names[{i}]: duplicate name {name:?}"));
            }
        }
        let n = self.class_names.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label_id >= n {
                out.push(format!(
                    "samples[{i}].label_id: {} out of range 0..{n}",
                    s.label_id
                ));
            }
            if check_files && !self.resolve(&s.image_path).is_file() {
                out.push(format!("samples[{i}].image_path: {} does not exist", s.image_path));
            }
            if let Some(mask) = &s.mask_path {
                if check_files && !self.resolve(mask).is_file() {
                    out.push(format!("samples[{i}].mask_path: {mask} does not exist"));
                }
            }
        }
        out
    }

    /// Ensures the listed samples carry ground-truth masks (needed when the
    /// localization branch is trained).
    pub fn require_masks(&self, sample_indices: impl IntoIterator<Item = usize>) -> Result<()> {
        let missing: Vec<String> = sample_indices
            .into_iter()
            .filter(|&i| self.samples[i].mask_path.is_none())
            .map(|i| format!("samples[{i}].mask_path: required when localization is enabled"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest {
                path: self.root.join("manifest.json"),
                violations: missing,
            })
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest, reporting all violations at once.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let fail = |violations: Vec<String>| Error::Manifest {
        path: path.to_path_buf(),
        violations,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(vec![format!("cannot read file: {e}")]))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut manifest: DatasetManifest = serde_path_to_error::deserialize(de)
        .map_err(|e| fail(vec![format!("{}: {}", e.path(), e.inner())]))?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let violations = manifest.violations(true);
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(fail(violations))
    }
}
