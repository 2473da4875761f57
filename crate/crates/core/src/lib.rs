//! Open-set classification of synthetic image manipulations.
//!
//! A hybrid network (residual backbone, transformer head on feature-map
//! patches, convolutional localization branch) is trained on the known
//! manipulation classes; MSP, MLS and OpenMax turn its outputs into
//! accept/reject decisions, and the evaluation module measures closed-set
//! accuracy and open-set AUC.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod rejection;
pub mod training;

pub use error::{Error, Result};
