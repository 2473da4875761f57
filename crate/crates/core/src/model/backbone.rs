use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{BatchNorm2d, Conv2d, ConvSpec};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Backbone output `f_r`, batched as (B, D_f, H_f, W_f).
#[derive(Debug, Clone)]
pub struct FeatureMap(pub Tensor);

impl FeatureMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// (H_f, W_f, D_f)
    pub fn geometry(&self) -> Result<(usize, usize, usize)> {
        let (_, d, h, w) = self.0.dims4()?;
        Ok((h, w, d))
    }
}

fn conv(
    store: &mut ParamStore,
    name: &str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Result<Conv2d> {
    Conv2d::new(
        store,
        name,
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            bias: false,
        },
    )
}

/// Two 3×3 convolutions with a projected shortcut; the first convolution
/// halves the resolution.
#[derive(Debug, Clone)]
struct DownBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Conv2d,
    shortcut_bn: BatchNorm2d,
}

impl DownBlock {
    fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv1: conv(store, &format!("{name}.conv1"), in_c, out_c, 3, 2)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), out_c)?,
            conv2: conv(store, &format!("{name}.conv2"), out_c, out_c, 3, 1)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), out_c)?,
            shortcut: conv(store, &format!("{name}.shortcut"), in_c, out_c, 1, 2)?,
            shortcut_bn: BatchNorm2d::new(store, &format!("{name}.shortcut_bn"), out_c)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        let s = self.shortcut_bn.forward(&self.shortcut.forward(x)?, train)?;
        (y + s)?.relu()
    }
}

/// Residual feature extractor: a stride-1, kernel-3 stem followed by one
/// downsampling residual block per configured stage.
#[derive(Debug, Clone)]
pub struct ResidualBackbone {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<DownBlock>,
    input_hw: (usize, usize),
}

impl ResidualBackbone {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let channels = &cfg.backbone_stage_channels;
        let stem = conv(store, "backbone.stem", cfg.input_channels, channels[0], 3, 1)?;
        let stem_bn = BatchNorm2d::new(store, "backbone.stem_bn", channels[0])?;
        let mut stages = Vec::with_capacity(channels.len());
        let mut prev = channels[0];
        for (i, &c) in channels.iter().enumerate() {
            stages.push(DownBlock::new(store, &format!("backbone.stage{i}"), prev, c)?);
            prev = c;
        }
        Ok(Self {
            stem,
            stem_bn,
            stages,
            input_hw: (cfg.input_height, cfg.input_width),
        })
    }

    /// `images`: (B, 3, H, W) with values in [0, 1].
    pub fn extract_features(&self, images: &Tensor, train: bool) -> Result<FeatureMap> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || (h, w) != self.input_hw {
            return Err(Error::Config(format!(
                "image is {c}x{h}x{w} (CxHxW) but the model expects 3x{}x{}",
                self.input_hw.0, self.input_hw.1
            )));
        }
        let mut x = self.stem_bn.forward(&self.stem.forward(images)?, train)?.relu()?;
        for stage in &self.stages {
            x = stage.forward(&x, train)?;
        }
        Ok(FeatureMap(x))
    }
}
