use candle_core::{DType, Device, Tensor};
use hybrid_osr::model::HybridModel;
use hybrid_osr::training::{hybrid_loss_batch, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_images, random_masks, tiny_config};

const STEP: f64 = 1e-6;

struct Problem {
    model: HybridModel,
    images: Tensor,
    labels: Tensor,
    masks: Tensor,
}

impl Problem {
    fn new(seed: u64) -> Self {
        let mut cfg = tiny_config(8, 1 + (seed as usize % 2), true);
        cfg.backbone_stage_channels = vec![2, 4];
        cfg.embed_dim = 4;
        let model = HybridModel::new(cfg, seed, DType::F64, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u32> = (0..3).map(|_| rng.random_range(0..3)).collect();
        Self {
            images: random_images(seed, 3, 8, 8, DType::F64),
            labels: Tensor::new(labels.as_slice(), &Device::Cpu).unwrap(),
            masks: random_masks(seed, 3, 2, 2, DType::F64),
            model,
        }
    }

    fn loss(&self) -> Tensor {
        let out = self.model.forward_t(&self.images, true).unwrap();
        let mask = out.mask.as_ref().unwrap();
        hybrid_loss_batch(&out.logits, &self.labels, Some((mask, &self.masks)), LossWeights { cls: 1.0, loc: 0.7 })
            .unwrap()
            .total
    }

    fn loss_value(&self) -> f64 {
        self.loss().to_scalar::<f64>().unwrap()
    }
}

/// Compares autograd with central differences over every trainable scalar
/// of a small hybrid model at f64. Returns the relative error of the whole
/// gradient vector.
pub fn gradient_check(seed: u64) -> Result<f64, String> {
    let problem = Problem::new(seed);
    let n = problem.model.params().num_trainable_scalars();
    if n > 5000 {
        return Err(format!("gradient-check model has {n} parameters"));
    }
    let grads = problem.loss().backward().unwrap();
    let (mut diff2, mut norm2) = (0.0f64, 0.0f64);
    let mut worst = (0.0f64, String::new());
    for (name, var) in problem.model.params().trainable() {
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap())
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let shape = var.shape().clone();
        let base = var.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..base.len() {
            let mut shifted = base.clone();
            shifted[i] = base[i] + STEP;
            var.set(&Tensor::from_vec(shifted.clone(), shape.clone(), &Device::Cpu).unwrap()).unwrap();
            let up = problem.loss_value();
            shifted[i] = base[i] - STEP;
            var.set(&Tensor::from_vec(shifted, shape.clone(), &Device::Cpu).unwrap()).unwrap();
            let down = problem.loss_value();
            let numeric = (up - down) / (2.0 * STEP);
            let d = (numeric - analytic[i]).abs();
            diff2 += d * d;
            norm2 += numeric * numeric + analytic[i] * analytic[i];
            let rel = d / analytic[i].abs().max(numeric.abs()).max(1e-4);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: autograd {} vs numeric {numeric}", analytic[i]));
            }
        }
        var.set(&Tensor::from_vec(base, shape, &Device::Cpu).unwrap()).unwrap();
    }
    let rel = diff2.sqrt() / norm2.sqrt().max(1e-300);
    if rel < 1e-3 && worst.0 < 1e-3 {
        Ok(rel)
    } else {
        Err(format!("seed {seed}: relative error {rel:e}; worst entry {}", worst.1))
    }
}
