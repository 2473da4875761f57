//! Procedural manipulation dataset.
//!
//! Every image is a smooth random texture. Class 0 ("none") is left
//! untouched; every other class blends a grey grating into one of two region
//! templates. Regions alternate between consecutive classes, so mask geometry
//! follows a category shared by several classes while the grating's
//! orientation and frequency identify the class.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Partition, SampleEntry, MANIFEST_VERSION};
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGenConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    #[serde(default = "default_noise")]
    pub texture_noise: f64,
    #[serde(default = "default_strength")]
    pub manipulation_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.04
}

fn default_strength() -> f64 {
    0.6
}

impl Default for SyntheticGenConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_classes: 8,
            samples_per_class: 60,
            texture_noise: default_noise(),
            manipulation_strength: default_strength(),
            seed: 0,
        }
    }
}

impl SyntheticGenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes < 4 {
            problems.push(format!("num_classes must be >= 4, got {}", self.num_classes));
        }
        if self.image_size < 8 {
            problems.push(format!("image_size must be >= 8, got {}", self.image_size));
        }
        if self.samples_per_class == 0 {
            problems.push("samples_per_class must be >= 1".to_string());
        }
        if !(self.manipulation_strength > 0.0 && self.manipulation_strength <= 1.0) {
            problems.push(format!(
                "manipulation_strength must lie in (0, 1], got {}",
                self.manipulation_strength
            ));
        }
        if !(self.texture_noise >= 0.0) {
            problems.push(format!("texture_noise must be >= 0, got {}", self.texture_noise));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|k| match k {
                0 => "none".to_string(),
                k => format!("edit{k:02}_{}", Region::for_class(k).name()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    /// Upper band.
    Top,
    /// Central ellipse.
    Center,
}

impl Region {
    fn for_class(k: usize) -> Self {
        match (k - 1) % 2 {
            0 => Region::Top,
            _ => Region::Center,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Region::Top => "top",
            Region::Center => "center",
        }
    }

    /// Membership test in coordinates normalized to [0, 1], after jitter.
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Region::Top => (0.06..0.34).contains(&y) && (0.15..0.85).contains(&x),
            Region::Center => {
                let (dy, dx) = ((y - 0.55) / 0.22, (x - 0.5) / 0.28);
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// Texture signature of an edit class.
struct Signature {
    region: Region,
    /// Cycles across the image.
    frequency: f64,
    orientation: f64,
    phase: f64,
}

impl Signature {
    fn for_class(k: usize) -> Self {
        let golden = 0.618_033_988_749_895;
        Self {
            region: Region::for_class(k),
            frequency: 4.0 + 2.0 * ((k * 3) % 4) as f64,
            orientation: (k as f64 * golden).fract() * PI,
            phase: k as f64 * 1.3,
        }
    }

    fn value(&self, y: f64, x: f64, phase_shift: f64) -> f64 {
        let arg = x * self.orientation.cos() + y * self.orientation.sin();
        (2.0 * PI * self.frequency * arg + self.phase + phase_shift).sin()
    }
}

/// Renders sample `index` of class `label`: RGB values in [0, 1] (row-major,
/// interleaved) and the binary mask.
fn render(cfg: &SyntheticGenConfig, label: usize, index: u64) -> (Vec<f64>, Vec<bool>) {
    let s = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let noise = Normal::new(0.0, cfg.texture_noise.max(1e-12)).expect("validated noise level");

    let base: [f64; 3] = [0.5, 0.45, 0.42].map(|c| c + rng.random_range(-0.05..0.05));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.02..0.05),
            )
        })
        .collect();
    let mut pixels = vec![0.0; s * s * 3];
    for r in 0..s {
        for c in 0..s {
            let (y, x) = (r as f64 / s as f64, c as f64 / s as f64);
            let field: f64 = waves
                .iter()
                .map(|&(f, th, ph, amp)| amp * (2.0 * PI * f * (x * th.cos() + y * th.sin()) + ph).sin())
                .sum();
            for ch in 0..3 {
                let v = base[ch] + field + if cfg.texture_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                pixels[(r * s + c) * 3 + ch] = v;
            }
        }
    }

    let mut mask = vec![false; s * s];
    if label > 0 {
        let sig = Signature::for_class(label);
        let (jy, jx) = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
        let strength = cfg.manipulation_strength * rng.random_range(0.85..1.0);
        let shift = rng.random_range(-0.2..0.2);
        for r in 0..s {
            for c in 0..s {
                let (y, x) = (r as f64 / s as f64, c as f64 / s as f64);
                if !sig.region.contains(y - jy, x - jx) {
                    continue;
                }
                mask[r * s + c] = true;
                let wave = sig.value(y, x, shift);
                let target = 0.5 + 0.3 * wave;
                for ch in 0..3 {
                    let p = &mut pixels[(r * s + c) * 3 + ch];
                    *p = (1.0 - strength) * *p + strength * target;
                }
            }
        }
    }
    pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    (pixels, mask)
}

/// Writes PNG images, PNG masks (255 = manipulated) and `manifest.json` into
/// `out_dir`. The first 80% of each class's samples form the train
/// partition. Output is a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticGenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let s = cfg.image_size as u32;
    let n_train = (cfg.samples_per_class as f64 * TRAIN_FRACTION).round() as usize;
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for label in 0..cfg.num_classes {
        for i in 0..cfg.samples_per_class {
            let index = (label * cfg.samples_per_class + i) as u64;
            let (pixels, mask) = render(cfg, label, index);
            let image = RgbImage::from_fn(s, s, |c, r| {
                let o = (r as usize * cfg.image_size + c as usize) * 3;
                Rgb([0, 1, 2].map(|ch| (pixels[o + ch] * 255.0).round() as u8))
            });
            let mask_img = GrayImage::from_fn(s, s, |c, r| {
                Luma([if mask[r as usize * cfg.image_size + c as usize] { 255 } else { 0 }])
            });
            let image_path = format!("images/c{label:02}_{i:05}.png");
            let mask_path = format!("masks/c{label:02}_{i:05}.png");
            let p = out_dir.join(&image_path);
            image.save(&p).map_err(|e| Error::Image { path: p.clone(), source: e })?;
            let p = out_dir.join(&mask_path);
            mask_img.save(&p).map_err(|e| Error::Image { path: p.clone(), source: e })?;
            samples.push(SampleEntry {
                image_path,
                label_id: label,
                mask_path: Some(mask_path),
                partition: if i < n_train { Partition::Train } else { Partition::Test },
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.into(),
        class_names: cfg.class_names(),
        samples,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
