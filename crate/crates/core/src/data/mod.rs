//! Dataset manifests, class splits, mask preparation, image loading and the
//! procedural dataset generator.

pub mod loader;
pub mod manifest;
pub mod mask;
pub mod split;
pub mod synthetic;

pub use loader::{load_images, load_masks, load_training_set};
pub use manifest::{load_manifest, DatasetManifest, Partition, SampleEntry, MANIFEST_VERSION};
pub use mask::prepare_mask;
pub use split::{
    make_split, DataSplit, SplitConfig, SplitSample, ATTRIBUTION_CLASSES, FACE_EDIT_CLASSES,
};
pub use synthetic::{generate_synthetic, SyntheticGenConfig};
