#![allow(dead_code)]

pub mod gradcheck;

use candle_core::{DType, Device, Tensor};
use hybrid_osr::model::{HeadKind, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(input: usize, patch_size: usize, localization: bool) -> ModelConfig {
    ModelConfig {
        input_height: input,
        input_width: input,
        input_channels: 3,
        num_classes: 3,
        backbone_stage_channels: vec![4, 8],
        patch_size,
        embed_dim: 8,
        num_blocks: 1,
        num_heads: 2,
        mlp_ratio: 2.0,
        localization_enabled: localization,
        head: HeadKind::Transformer,
    }
}

/// Uniform images in [0, 1], shape (n, 3, h, w).
pub fn random_images(seed: u64, n: usize, h: usize, w: usize, dtype: DType) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * 3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::from_vec(data, (n, 3, h, w), &Device::Cpu)
        .unwrap()
        .to_dtype(dtype)
        .unwrap()
}

/// Soft ground-truth masks in [0, 1], shape (n, h, w).
pub fn random_masks(seed: u64, n: usize, h: usize, w: usize, dtype: DType) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let data: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::from_vec(data, (n, h, w), &Device::Cpu)
        .unwrap()
        .to_dtype(dtype)
        .unwrap()
}
