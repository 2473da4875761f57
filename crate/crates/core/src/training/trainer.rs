use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::Checkpoint;
use super::loss::{hybrid_loss_batch, LossWeights};
use super::resplit::resplit;
use crate::error::{Error, Result};
use crate::model::HybridModel;

const EVAL_BATCH: usize = 64;
const SHUFFLE_STREAM_SALT: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "one")]
    pub lambda_cls: f64,
    #[serde(default = "one")]
    pub lambda_loc: f64,
    #[serde(default = "default_resplit")]
    pub resplit_interval: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-5
}
fn default_batch() -> usize {
    32
}
fn one() -> f64 {
    1.0
}
fn default_resplit() -> usize {
    10
}
fn default_val_fraction() -> f64 {
    400.0 / 4400.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: 100,
            lambda_cls: 1.0,
            lambda_loc: 1.0,
            resplit_interval: default_resplit(),
            val_fraction: default_val_fraction(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lambda_cls >= 0.0 && self.lambda_loc >= 0.0 && self.lambda_cls + self.lambda_loc > 0.0) {
            problems.push(format!(
                "loss weights must be nonnegative with a positive sum (lambda_cls={}, lambda_loc={})",
                self.lambda_cls, self.lambda_loc
            ));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.resplit_interval == 0 {
            problems.push("resplit_interval must be >= 1".to_string());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            problems.push(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            cls: self.lambda_cls,
            loc: self.lambda_loc,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_learning_rate(self.learning_rate)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    /// Absent when the localization branch is disabled.
    pub train_mse: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// In-memory closed-set training data.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// (N, 3, H, W), values in [0, 1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// (N, H_f, W_f) ground truth already pooled to feature resolution.
    pub masks: Option<Tensor>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn select(&self, indices: &[usize]) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
        let idx = Tensor::new(idx.as_slice(), self.images.device())?;
        let images = self.images.index_select(&idx, 0)?;
        let labels: Vec<u32> = indices.iter().map(|&i| self.labels[i] as u32).collect();
        let labels = Tensor::new(labels.as_slice(), self.images.device())?;
        let masks = match &self.masks {
            Some(m) => Some(m.index_select(&idx, 0)?),
            None => None,
        };
        Ok((images, labels, masks))
    }
}

/// Closed-set accuracy of `model` (inference mode) on a subset.
pub fn subset_accuracy(model: &HybridModel, data: &TrainingSet, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Precondition("accuracy of an empty subset".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, _, _) = data.select(chunk)?;
        for (out, &i) in model.predict(&images)?.iter().zip(chunk) {
            if out.predicted_class() == data.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

fn check_inputs(model: &HybridModel, data: &TrainingSet) -> Result<()> {
    let cfg = model.config();
    if data.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= cfg.num_classes) {
        return Err(Error::Precondition(format!(
            "label {bad} is not an in-set class (N = {})",
            cfg.num_classes
        )));
    }
    if data.images.dims4()?.0 != data.len() {
        return Err(Error::Precondition("image count differs from label count".into()));
    }
    match (&data.masks, cfg.localization_enabled) {
        (None, true) => Err(Error::Precondition(
            "localization is enabled but the training set carries no masks".into(),
        )),
        (Some(m), true) => {
            let expected = [data.len(), cfg.feature_height(), cfg.feature_width()];
            if m.dims() != expected {
                Err(Error::Precondition(format!(
                    "masks have shape {:?}, expected {expected:?}",
                    m.dims()
                )))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Minibatch Adam on the hybrid loss.
///
/// The validation subset is redrawn from the pool every
/// `resplit_interval` epochs; the parameters of the epoch with the highest
/// validation accuracy (latest on ties) are kept in [`Checkpoint::best_params`]. With
/// `resume`, training continues from the stored epoch and optimizer state.
pub fn train(
    model: &HybridModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    check_inputs(model, data)?;
    let (mut optimizer, mut ckpt) = match resume {
        Some(prev) => {
            model.params().restore(&prev.params)?;
            let opt = Adam::from_state(cfg.adam(), prev.optimizer.clone());
            (opt, prev.clone())
        }
        None => {
            let opt = Adam::new(cfg.adam(), model.params())?;
            let ckpt = Checkpoint::initial(model, cfg.adam(), opt.state().clone(), cfg.seed)?;
            (opt, ckpt)
        }
    };
    ckpt.adam_config = cfg.adam();
    let weights = cfg.loss_weights();
    let localize = model.config().localization_enabled;

    let mut split = None;
    for epoch in ckpt.epoch..cfg.epochs {
        let round = (epoch / cfg.resplit_interval) as u64;
        if epoch % cfg.resplit_interval == 0 || split.is_none() {
            split = Some(resplit(&data.labels, cfg.val_fraction, ckpt.seed, round)?);
        }
        let pool = split.as_ref().expect("split drawn above");
        let mut order = pool.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.seed ^ SHUFFLE_STREAM_SALT);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut ce_sum, mut mse_sum) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (images, labels, gt) = data.select(batch)?;
            let out = model.forward_t(&images, true)?;
            let masks = match (&out.mask, &gt, localize) {
                (Some(m), Some(g), true) => Some((m, g)),
                _ => None,
            };
            let loss = hybrid_loss_batch(&out.logits, &labels, masks, weights)?;
            let total = loss.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {total} at epoch {}, batch {b}",
                    epoch + 1
                )));
            }
            let grads = loss.total.backward()?;
            optimizer.step(model.params(), &grads)?;
            let n = batch.len() as f64;
            loss_sum += total * n;
            ce_sum += loss.ce * n;
            mse_sum += loss.mse.unwrap_or(0.0) * n;
        }
        let n = order.len().max(1) as f64;
        let val_accuracy = if pool.val.is_empty() {
            None
        } else {
            Some(subset_accuracy(model, data, &pool.val)?)
        };
        if let Some(acc) = val_accuracy {
            if ckpt.best_val_accuracy.is_none_or(|best| acc >= best) {
                ckpt.best_val_accuracy = Some(acc);
                ckpt.best_params = model.params().snapshot()?;
            }
        }
        ckpt.epoch = epoch + 1;
        ckpt.params = model.params().snapshot()?;
        ckpt.optimizer = optimizer.state().clone();
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_ce: ce_sum / n,
            train_mse: localize.then_some(mse_sum / n),
            val_accuracy,
        };
        log::info!(
            "epoch {} loss {:.4} ce {:.4} val_acc {:?}",
            metrics.epoch,
            metrics.train_loss,
            metrics.train_ce,
            metrics.val_accuracy
        );
        on_epoch(&metrics)?;
    }
    Ok(ckpt)
}
