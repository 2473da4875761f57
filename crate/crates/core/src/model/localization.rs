use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{sigmoid, BatchNorm2d, Conv2d, ConvSpec};
use super::params::ParamStore;
use crate::error::Result;

/// Pre-activation bound that keeps the f32 sigmoid output strictly in (0, 1).
const MASK_LOGIT_BOUND: f64 = 16.0;

/// Fully convolutional mask predictor: conv3×3 → BN → ReLU → conv1×1 → sigmoid,
/// evaluated at feature-map resolution.
#[derive(Debug, Clone)]
pub struct LocalizationHead {
    conv1: Conv2d,
    bn: BatchNorm2d,
    conv2: Conv2d,
}

impl LocalizationHead {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.feature_channels();
        let hidden = (d / 2).max(1);
        Ok(Self {
            conv1: Conv2d::new(
                store,
                "fcn.conv1",
                ConvSpec {
                    in_channels: d,
                    out_channels: hidden,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: true,
                },
            )?,
            bn: BatchNorm2d::new(store, "fcn.bn", hidden)?,
            conv2: Conv2d::new(
                store,
                "fcn.conv2",
                ConvSpec {
                    in_channels: hidden,
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    bias: true,
                },
            )?,
        })
    }

    /// (B, D_f, H_f, W_f) → (B, H_f, W_f) mask in (0, 1).
    pub fn localize(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.bn.forward(&self.conv1.forward(features)?, train)?.relu()?;
        let logits = self
            .conv2
            .forward(&x)?
            .clamp(-MASK_LOGIT_BOUND, MASK_LOGIT_BOUND)?;
        Ok(sigmoid(&logits)?.squeeze(1)?)
    }
}
