use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;

use super::manifest::DatasetManifest;
use super::mask::prepare_mask;
use super::split::SplitSample;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainingSet;

/// Reads the images of `indices` as an (N, 3, H, W) tensor in [0, 1],
/// resizing any image whose size differs from `height × width`.
pub fn load_images(
    manifest: &DatasetManifest,
    indices: &[usize],
    height: usize,
    width: usize,
    device: &Device,
) -> Result<Tensor> {
    let plane = height * width;
    let mut data = vec![0f32; indices.len() * 3 * plane];
    for (n, &i) in indices.iter().enumerate() {
        let path = manifest.resolve(&manifest.samples[i].image_path);
        let img = image::open(&path)
            .map_err(|e| Error::Image { path: path.clone(), source: e })?
            .to_rgb8();
        let img = if img.dimensions() != (width as u32, height as u32) {
            image::imageops::resize(&img, width as u32, height as u32, FilterType::Triangle)
        } else {
            img
        };
        let out = &mut data[n * 3 * plane..(n + 1) * 3 * plane];
        for (k, px) in img.pixels().enumerate() {
            for ch in 0..3 {
                out[ch * plane + k] = px[ch] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, (indices.len(), 3, height, width), device)?)
}

/// Reads ground-truth masks (nonzero = manipulated) and pools them to the
/// feature-map resolution: (N, out_height, out_width).
pub fn load_masks(
    manifest: &DatasetManifest,
    indices: &[usize],
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
    device: &Device,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * out_height * out_width);
    for &i in indices {
        let rel = manifest.samples[i].mask_path.as_deref().ok_or_else(|| Error::Manifest {
            path: manifest.root.join("manifest.json"),
            violations: vec![format!("samples[{i}].mask_path: required when localization is enabled")],
        })?;
        let path = manifest.resolve(rel);
        let img = image::open(&path)
            .map_err(|e| Error::Image { path: path.clone(), source: e })?
            .to_luma8();
        let img = if img.dimensions() != (width as u32, height as u32) {
            image::imageops::resize(&img, width as u32, height as u32, FilterType::Nearest)
        } else {
            img
        };
        let binary: Vec<f64> = img.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect();
        let pooled = prepare_mask(&binary, height, width, out_height, out_width)?;
        data.extend(pooled.into_iter().map(|v| v as f32));
    }
    Ok(Tensor::from_vec(data, (indices.len(), out_height, out_width), device)?)
}

/// Builds a training set from closed-set samples, remapped labels included.
/// Masks are loaded only when the model has the localization branch.
pub fn load_training_set(
    manifest: &DatasetManifest,
    samples: &[SplitSample],
    cfg: &ModelConfig,
    dtype: DType,
    device: &Device,
) -> Result<TrainingSet> {
    let indices: Vec<usize> = samples.iter().map(|s| s.index).collect();
    let labels = samples
        .iter()
        .map(|s| {
            s.label.ok_or_else(|| {
                Error::Precondition(format!("sample {} is not a closed-set sample", s.index))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let images = load_images(manifest, &indices, cfg.input_height, cfg.input_width, device)?
        .to_dtype(dtype)?;
    let masks = if cfg.localization_enabled {
        manifest.require_masks(indices.iter().copied())?;
        let m = load_masks(
            manifest,
            &indices,
            cfg.input_height,
            cfg.input_width,
            cfg.feature_height(),
            cfg.feature_width(),
            device,
        )?;
        Some(m.to_dtype(dtype)?)
    } else {
        None
    };
    Ok(TrainingSet { images, labels, masks })
}
