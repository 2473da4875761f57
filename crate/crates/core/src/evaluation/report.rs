use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::metrics::{closed_accuracy, confusion_matrix, per_class_accuracy, roc_auc, RocCurve};
use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelOutput};
use crate::rejection::{acceptance_score, OpenMaxModel, RejectionStrategy};

/// Published full-scale results (percent) for one face-editing split. Kept
/// for orientation only; the desk-scale sandbox is not expected to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub closed_accuracy: f64,
    pub auc_msp: f64,
    pub auc_openmax: f64,
    pub auc_mls: f64,
    pub note: String,
}

const PUBLISHED: [(&str, [f64; 4]); 10] = [
    ("G0", [88.99, 79.35, 81.83, 85.34]),
    ("G1", [94.68, 79.63, 81.89, 91.36]),
    ("G2", [87.03, 71.49, 81.39, 78.34]),
    ("G3", [94.34, 84.54, 74.86, 91.98]),
    ("G4", [95.25, 83.97, 81.34, 89.75]),
    ("G5", [92.65, 82.29, 78.62, 88.05]),
    ("G6", [95.51, 87.29, 86.20, 95.23]),
    ("G7", [89.24, 75.50, 83.72, 82.43]),
    ("G8", [94.94, 84.49, 85.00, 93.13]),
    ("G9", [95.94, 83.30, 83.73, 91.77]),
];

pub fn reference_values(split_name: &str) -> Option<ReferenceValues> {
    PUBLISHED.iter().find(|(n, _)| *n == split_name).map(|(_, v)| ReferenceValues {
        closed_accuracy: v[0],
        auc_msp: v[1],
        auc_openmax: v[2],
        auc_mls: v[3],
        note: "full-scale face-editing corpus, GPU training; not reproducible at desk scale".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split_name: String,
    pub closed_accuracy: f64,
    /// `None` for classes absent from the closed test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub auc_by_strategy: BTreeMap<RejectionStrategy, f64>,
    pub num_closed_test: usize,
    pub num_open_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceValues>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Report plus the ROC curve behind each AUC.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub curves: BTreeMap<RejectionStrategy, RocCurve>,
}

/// Scores closed-test outputs (in-set) against open-test outputs
/// (out-of-set) for each strategy.
pub fn evaluate_outputs(
    split_name: &str,
    num_classes: usize,
    closed: &[ModelOutput],
    closed_labels: &[usize],
    open: &[ModelOutput],
    strategies: &[RejectionStrategy],
    openmax: Option<&OpenMaxModel>,
) -> Result<Evaluation> {
    if strategies.contains(&RejectionStrategy::OpenMax) && openmax.is_none() {
        return Err(Error::Usage("OPENMAX requested without a fitted OpenMax model".into()));
    }
    let preds: Vec<usize> = closed.iter().map(ModelOutput::predicted_class).collect();
    let closed_accuracy = closed_accuracy(&preds, closed_labels)?;
    let confusion = confusion_matrix(&preds, closed_labels, num_classes)?;
    let mut auc_by_strategy = BTreeMap::new();
    let mut curves = BTreeMap::new();
    if !open.is_empty() {
        for &strategy in strategies {
            let score = |o: &ModelOutput| acceptance_score(strategy, o, openmax);
            let s_in = closed.iter().map(score).collect::<Result<Vec<_>>>()?;
            let s_out = open.iter().map(score).collect::<Result<Vec<_>>>()?;
            let curve = roc_auc(&s_in, &s_out)?;
            auc_by_strategy.insert(strategy, curve.auc);
            curves.insert(strategy, curve);
        }
    } else {
        log::warn!("split {split_name}: no out-of-set samples, AUC not computed");
    }
    Ok(Evaluation {
        report: MetricsReport {
            split_name: split_name.to_string(),
            closed_accuracy,
            per_class_accuracy: per_class_accuracy(&confusion),
            confusion,
            auc_by_strategy,
            num_closed_test: closed.len(),
            num_open_test: open.len(),
            reference: reference_values(split_name),
        },
        curves,
    })
}

const PREDICT_BATCH: usize = 64;

/// Inference over an (N, 3, H, W) tensor in fixed-size chunks.
pub fn predict_in_batches(model: &HybridModel, images: &Tensor) -> Result<Vec<ModelOutput>> {
    let n = images.dim(0)?;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = PREDICT_BATCH.min(n - start);
        out.extend(model.predict(&images.narrow(0, start, len)?)?);
        start += len;
    }
    Ok(out)
}

/// Runs `model` on the closed and open test images and assembles the report.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_open_set(
    model: &HybridModel,
    openmax: Option<&OpenMaxModel>,
    split_name: &str,
    closed_images: &Tensor,
    closed_labels: &[usize],
    open_images: Option<&Tensor>,
    strategies: &[RejectionStrategy],
) -> Result<Evaluation> {
    let closed = predict_in_batches(model, closed_images)?;
    let open = match open_images {
        Some(t) => predict_in_batches(model, t)?,
        None => Vec::new(),
    };
    evaluate_outputs(
        split_name,
        model.config().num_classes,
        &closed,
        closed_labels,
        &open,
        strategies,
        openmax,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rejection::{fit_openmax, ActivationRecord};

    fn outputs(seed: u64, n: usize) -> Vec<ModelOutput> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| ModelOutput::from_logits((0..3).map(|_| rng.random_range(-3.0..3.0)).collect(), None))
            .collect()
    }

    #[test]
    fn identical_open_and_closed_sets_give_chance_auc() {
        let closed = outputs(1, 50);
        let labels: Vec<usize> = closed.iter().map(|o| o.predicted_class()).collect();
        let records: Vec<ActivationRecord> = closed
            .iter()
            .enumerate()
            .map(|(i, o)| ActivationRecord {
                sample_id: i.to_string(),
                true_label: labels[i],
                pred_label: labels[i],
                logits: o.logits.clone(),
            })
            .collect();
        let om = fit_openmax(&records, 10, 2).unwrap();
        let e = evaluate_outputs("X", 3, &closed, &labels, &closed, &RejectionStrategy::ALL, Some(&om)).unwrap();
        assert_eq!(e.report.closed_accuracy, 1.0);
        assert_eq!(e.report.auc_by_strategy.len(), 3);
        for auc in e.report.auc_by_strategy.values() {
            assert!((auc - 0.5).abs() < 1e-12);
        }
        assert!(e.report.reference.is_none());
    }

    #[test]
    fn openmax_without_model_is_rejected() {
        let closed = outputs(2, 5);
        let labels = vec![0; 5];
        assert!(evaluate_outputs("G0", 3, &closed, &labels, &closed, &[RejectionStrategy::OpenMax], None).is_err());
        let e = evaluate_outputs("G0", 3, &closed, &labels, &closed, &[RejectionStrategy::Mls], None).unwrap();
        let r = e.report.reference.unwrap();
        assert_eq!((r.closed_accuracy, r.auc_mls), (88.99, 85.34));
        let total: u64 = e.report.confusion.iter().flatten().sum();
        let trace: u64 = (0..3).map(|i| e.report.confusion[i][i]).sum();
        assert_eq!(e.report.closed_accuracy, trace as f64 / total as f64);
    }
}
