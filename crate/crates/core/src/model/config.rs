use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification head placed on top of the shared backbone features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Patch tokens from the feature map, transformer encoder, class-token readout.
    Transformer,
    /// Global average pooling of the feature map followed by a linear layer.
    Pooling,
}

/// Architecture hyperparameters of the hybrid classifier.
///
/// The feature-map geometry (`H_f`, `W_f`, `D_f`) is not stored: it is
/// forced by the input size and the stride schedule of the backbone (one
/// stride-1 stem, then one ×2 downsampling per stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    pub num_classes: usize,
    pub backbone_stage_channels: Vec<usize>,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub localization_enabled: bool,
    #[serde(default = "default_head")]
    pub head: HeadKind,
}

fn default_input_channels() -> usize {
    3
}

fn default_head() -> HeadKind {
    HeadKind::Transformer
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 256,
            input_width: 256,
            input_channels: 3,
            num_classes: 11,
            backbone_stage_channels: vec![32, 64, 128, 256],
            patch_size: 1,
            embed_dim: 256,
            num_blocks: 4,
            num_heads: 8,
            mlp_ratio: 4.0,
            localization_enabled: true,
            head: HeadKind::Transformer,
        }
    }
}

impl ModelConfig {
    pub fn downsampling(&self) -> usize {
        1 << self.backbone_stage_channels.len()
    }

    pub fn feature_height(&self) -> usize {
        self.input_height / self.downsampling()
    }

    pub fn feature_width(&self) -> usize {
        self.input_width / self.downsampling()
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone_stage_channels.last().copied().unwrap_or(0)
    }

    /// Number of patch tokens `N_p = H_f·W_f / P²`.
    pub fn num_patches(&self) -> usize {
        let p2 = self.patch_size * self.patch_size;
        self.feature_height() * self.feature_width() / p2
    }

    /// Length of one flattened patch, `P²·D_f`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.feature_channels()
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_channels != 3 {
            problems.push(format!(
                "input_channels must be 3, got {}",
                self.input_channels
            ));
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.backbone_stage_channels.is_empty()
            || self.backbone_stage_channels.contains(&0)
        {
            problems.push("backbone_stage_channels must be a nonempty list of positive counts".into());
        } else {
            let d = self.downsampling();
            if self.input_height % d != 0 || self.input_width % d != 0 || self.input_height == 0 {
                problems.push(format!(
                    "input {}x{} is not divisible by the backbone downsampling factor {d}",
                    self.input_height, self.input_width
                ));
            }
        }
        if self.head == HeadKind::Transformer {
            let (hf, wf) = (self.feature_height(), self.feature_width());
            if self.patch_size == 0 || hf % self.patch_size != 0 || wf % self.patch_size != 0 {
                problems.push(format!(
                    "patch_size {} does not divide the {hf}x{wf} feature map",
                    self.patch_size
                ));
            }
            if self.num_blocks < 1 {
                problems.push("num_blocks must be >= 1".into());
            }
            if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
                problems.push(format!(
                    "embed_dim {} is not divisible by num_heads {}",
                    self.embed_dim, self.num_heads
                ));
            }
            if !(self.mlp_ratio > 0.0) {
                problems.push(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
