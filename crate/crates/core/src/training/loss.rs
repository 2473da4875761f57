use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::log_softmax_last_dim;

/// Probability floor applied before taking the log in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub loc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, loc: 1.0 }
    }
}

/// Terms of `λ_cls·CE + λ_loc·MSE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
}

/// Hybrid loss for one sample.
///
/// `masks` is `(predicted, ground_truth)`; pass `None` in attribution mode,
/// which zeroes the MSE term and ignores `weights.loc`. The returned flag is
/// set when `p_y` had to be floored at [`PROB_FLOOR`].
pub fn hybrid_loss(
    probabilities: &[f64],
    label: usize,
    masks: Option<(&[f64], &[f64])>,
    weights: LossWeights,
) -> Result<(LossBreakdown, bool)> {
    let p_y = *probabilities.get(label).ok_or_else(|| {
        Error::Precondition(format!(
            "label {label} outside 0..{}",
            probabilities.len()
        ))
    })?;
    let clamped = p_y < PROB_FLOOR;
    let ce = -p_y.max(PROB_FLOOR).ln();
    let mse = match masks {
        Some((pred, gt)) => {
            if pred.len() != gt.len() || pred.is_empty() {
                return Err(Error::Precondition(format!(
                    "predicted mask has {} pixels, ground truth {}",
                    pred.len(),
                    gt.len()
                )));
            }
            pred.iter().zip(gt).map(|(m, g)| (g - m).powi(2)).sum::<f64>() / pred.len() as f64
        }
        None => 0.0,
    };
    let loc = if masks.is_some() { weights.loc } else { 0.0 };
    if clamped {
        log::warn!("p_y = {p_y:e} floored at {PROB_FLOOR:e} in the cross-entropy");
    }
    Ok((
        LossBreakdown {
            ce,
            mse,
            total: weights.cls * ce + loc * mse,
        },
        clamped,
    ))
}

/// Batch loss kept on the autograd graph.
pub struct BatchLoss {
    /// Scalar tensor to differentiate.
    pub total: Tensor,
    pub ce: f64,
    /// `None` when no mask prediction was supplied.
    pub mse: Option<f64>,
    /// Number of samples whose `p_y` was floored.
    pub clamped: usize,
}

/// Hybrid loss averaged over the batch: CE from the floored log-softmax,
/// MSE averaged over pixels and then over the batch.
///
/// `logits`: (B, N); `labels`: (B,) u32; masks: (B, H_f, W_f).
pub fn hybrid_loss_batch(
    logits: &Tensor,
    labels: &Tensor,
    masks: Option<(&Tensor, &Tensor)>,
    weights: LossWeights,
) -> Result<BatchLoss> {
    let log_p = log_softmax_last_dim(logits)?;
    let log_py = log_p.gather(&labels.unsqueeze(1)?, 1)?.squeeze(1)?;
    let floor = PROB_FLOOR.ln();
    let clamped = log_py
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .iter()
        .filter(|v| **v < floor)
        .count();
    if clamped > 0 {
        log::warn!("{clamped} sample(s) had p_y floored at {PROB_FLOOR:e}");
    }
    let ce = log_py.maximum(floor)?.neg()?.mean_all()?;
    let mut total = (&ce * weights.cls)?;
    let mut mse_value = None;
    if let Some((pred, gt)) = masks {
        let gt = gt.to_dtype(pred.dtype())?;
        let mse = (pred - gt)?.sqr()?.mean_all()?;
        mse_value = Some(mse.to_dtype(DType::F64)?.to_scalar::<f64>()?);
        total = (total + (mse * weights.loc)?)?;
    }
    Ok(BatchLoss {
        ce: ce.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        total,
        mse: mse_value,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;
    use candle_core::Device;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = [0.0, 1.0, 0.0];
        let m = [0.2, 0.7];
        let (l, clamped) = hybrid_loss(&p, 1, Some((&m, &m)), LossWeights::default()).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(!clamped);
    }

    #[test]
    fn uniform_eleven_class_closed_form() {
        let p = vec![1.0 / 11.0; 11];
        let pred = vec![0.5; 16];
        let gt = vec![1.0; 16];
        let (l, _) = hybrid_loss(&p, 4, Some((&pred, &gt)), LossWeights::default()).unwrap();
        assert!((l.ce - 11f64.ln()).abs() < 1e-12);
        assert!((l.ce - 2.3979).abs() < 1e-4);
        assert_eq!(l.mse, 0.25);
        assert!((l.total - 2.6479).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_floored_and_flagged() {
        let (l, clamped) = hybrid_loss(&[1.0, 0.0], 1, None, LossWeights::default()).unwrap();
        assert!(clamped);
        assert!((l.ce + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn attribution_mode_ignores_loc_weight() {
        let w = LossWeights { cls: 2.0, loc: 5.0 };
        let (l, _) = hybrid_loss(&[0.5, 0.5], 0, None, w).unwrap();
        assert_eq!(l.mse, 0.0);
        assert_eq!(l.total, 2.0 * 2f64.ln());
    }

    #[test]
    fn bad_label_is_rejected() {
        assert!(hybrid_loss(&[0.5, 0.5], 2, None, LossWeights::default()).is_err());
    }

    #[test]
    fn batch_loss_matches_per_sample_mean() {
        let dev = Device::Cpu;
        let logits = [[0.3f64, -1.2, 2.0], [1.0, 0.5, -0.5]];
        let labels = [2u32, 1];
        let pred = [[0.1f64, 0.9], [0.4, 0.6]];
        let gt = [[0.0f64, 1.0], [1.0, 1.0]];
        let w = LossWeights { cls: 0.7, loc: 1.3 };
        let batch = hybrid_loss_batch(
            &Tensor::new(&logits, &dev).unwrap(),
            &Tensor::new(&labels, &dev).unwrap(),
            Some((&Tensor::new(&pred, &dev).unwrap(), &Tensor::new(&gt, &dev).unwrap())),
            w,
        )
        .unwrap();
        let mut total = 0.0;
        for i in 0..2 {
            let (l, _) =
                hybrid_loss(&softmax(&logits[i]), labels[i] as usize, Some((&pred[i], &gt[i])), w).unwrap();
            total += l.total / 2.0;
        }
        let got = batch.total.to_scalar::<f64>().unwrap();
        assert!((got - total).abs() < 1e-12, "{got} vs {total}");
    }
}
