//! Hybrid classifier: residual CNN backbone, transformer head on
//! feature-map patches, and a convolutional localization branch that shares
//! the same backbone features.

mod backbone;
mod config;
mod layers;
mod localization;
mod params;
mod vit;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use backbone::{FeatureMap, ResidualBackbone};
pub use config::{HeadKind, ModelConfig};
pub use layers::{log_softmax_last_dim, softmax_last_dim, Linear};
pub use localization::LocalizationHead;
pub use params::{ParamKind, ParamStore};
pub use vit::{patchify, ClassifierHead, PatchEmbedding, PatchSequence, TransformerEncoder};

use crate::error::{Error, Result};

/// Numerically stable softmax: `p_i = exp(h_i − max h) / Σ_j exp(h_j − max h)`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|h| (h - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-major H_f × W_f mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Per-sample inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_mask: Option<Mask>,
    /// Vector consumed by OpenMax; the logits.
    pub activation_vector: Vec<f64>,
}

impl ModelOutput {
    pub fn from_logits(logits: Vec<f64>, predicted_mask: Option<Mask>) -> Self {
        Self {
            probabilities: softmax(&logits),
            activation_vector: logits.clone(),
            logits,
            predicted_mask,
        }
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Batched forward result kept on the tensor graph for training.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub features: FeatureMap,
    /// (B, N)
    pub logits: Tensor,
    /// (B, H_f, W_f), absent when localization is disabled.
    pub mask: Option<Tensor>,
}

#[derive(Debug, Clone)]
enum Head {
    Transformer {
        embedding: PatchEmbedding,
        encoder: TransformerEncoder,
        classifier: ClassifierHead,
    },
    Pooling {
        classifier: ClassifierHead,
    },
}

pub struct HybridModel {
    config: ModelConfig,
    params: ParamStore,
    backbone: ResidualBackbone,
    head: Head,
    localization: Option<LocalizationHead>,
}

impl HybridModel {
    /// Builds a randomly initialized model; the same (config, seed, dtype)
    /// always produces the same weights.
    pub fn new(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed, dtype, device.clone());
        let backbone = ResidualBackbone::new(&mut params, &config)?;
        let head = match config.head {
            HeadKind::Transformer => Head::Transformer {
                embedding: PatchEmbedding::new(&mut params, &config)?,
                encoder: TransformerEncoder::new(&mut params, &config)?,
                classifier: ClassifierHead::new(
                    &mut params,
                    "vit.head",
                    config.embed_dim,
                    config.num_classes,
                )?,
            },
            HeadKind::Pooling => Head::Pooling {
                classifier: ClassifierHead::new(
                    &mut params,
                    "pool_head",
                    config.feature_channels(),
                    config.num_classes,
                )?,
            },
        };
        let localization = if config.localization_enabled {
            Some(LocalizationHead::new(&mut params, &config)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            backbone,
            head,
            localization,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn backbone(&self) -> &ResidualBackbone {
        &self.backbone
    }

    pub fn localization_head(&self) -> Option<&LocalizationHead> {
        self.localization.as_ref()
    }

    /// `(embedding, encoder, classifier)` when the transformer head is active.
    pub fn transformer_parts(&self) -> Option<(&PatchEmbedding, &TransformerEncoder, &ClassifierHead)> {
        match &self.head {
            Head::Transformer {
                embedding,
                encoder,
                classifier,
            } => Some((embedding, encoder, classifier)),
            Head::Pooling { .. } => None,
        }
    }

    /// Logits from backbone features.
    pub fn classify_features(&self, features: &FeatureMap) -> Result<Tensor> {
        match &self.head {
            Head::Transformer {
                embedding,
                encoder,
                classifier,
            } => {
                let patches = patchify(features.tensor(), self.config.patch_size)?;
                let seq = embedding.embed(&patches)?;
                let encoded = encoder.encode(&seq)?;
                classifier.classify(&encoded)
            }
            Head::Pooling { classifier } => {
                let pooled = features.tensor().mean(3)?.mean(2)?;
                classifier.classify_pooled(&pooled)
            }
        }
    }

    /// Mask prediction on backbone features; a usage error in attribution mode.
    pub fn localize(&self, features: &FeatureMap, train: bool) -> Result<Tensor> {
        match &self.localization {
            Some(head) => head.localize(features.tensor(), train),
            None => Err(Error::Usage(
                "localization requested but the localization branch is disabled".into(),
            )),
        }
    }

    /// Full forward pass on a (B, 3, H, W) batch. `train` selects batch
    /// statistics in the normalization layers.
    pub fn forward_t(&self, images: &Tensor, train: bool) -> Result<BatchOutput> {
        let images = images.to_dtype(self.dtype())?;
        let range = images.flatten_all()?;
        let lo = range.min(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let hi = range.max(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !(lo >= 0.0 && hi <= 1.0) {
            return Err(Error::Precondition(format!(
                "pixel values must lie in [0, 1], found range [{lo}, {hi}]"
            )));
        }
        let features = self.backbone.extract_features(&images, train)?;
        let logits = self.classify_features(&features)?;
        let mask = match &self.localization {
            Some(head) => Some(head.localize(features.tensor(), train)?),
            None => None,
        };
        Ok(BatchOutput {
            features,
            logits,
            mask,
        })
    }

    /// Inference on a batch; one [`ModelOutput`] per image.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<ModelOutput>> {
        let out = self.forward_t(images, false)?;
        let logits = out.logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let masks: Vec<Option<Mask>> = match &out.mask {
            Some(m) => {
                let (_, h, w) = m.dims3()?;
                m.to_dtype(DType::F64)?
                    .flatten_from(1)?
                    .to_vec2::<f64>()?
                    .into_iter()
                    .map(|data| {
                        Some(Mask {
                            height: h,
                            width: w,
                            data,
                        })
                    })
                    .collect()
            }
            None => vec![None; logits.len()],
        };
        Ok(logits
            .into_iter()
            .zip(masks)
            .map(|(l, m)| ModelOutput::from_logits(l, m))
            .collect())
    }

    /// Single (3, H, W) image.
    pub fn forward(&self, image: &Tensor) -> Result<ModelOutput> {
        let batch = image.unsqueeze(0)?;
        Ok(self.predict(&batch)?.remove(0))
    }
}
