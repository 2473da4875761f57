use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of positions where `predictions` equals `labels`.
pub fn closed_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Precondition("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `confusion[true][predicted]` counts over `num_classes` classes.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::Precondition(format!(
                "label pair ({l}, {p}) outside 0..{num_classes}"
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Row-wise recall; `None` for classes without samples.
pub fn per_class_accuracy(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC of "accept as in-set" decisions (`score > threshold`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Thresholds strictly decreasing, from (0, 0) to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        s
    }
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Precondition(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Precondition(format!("{name} scores contain non-finite values")));
    }
    Ok(())
}

/// Sweeps the threshold over every distinct score (plus one below the
/// minimum) and integrates the curve with the trapezoid rule.
pub fn roc_auc(in_set_scores: &[f64], out_set_scores: &[f64]) -> Result<RocCurve> {
    check_scores("in-set", in_set_scores)?;
    check_scores("out-of-set", out_set_scores)?;
    let mut tagged: Vec<(f64, bool)> = in_set_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_set_scores.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_in, n_out) = (in_set_scores.len() as f64, out_set_scores.len() as f64);

    let mut points = vec![RocPoint {
        threshold: tagged[0].0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < tagged.len() {
        let score = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == score {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // scores equal to `score` are accepted once the threshold drops below it
        let threshold = if i < tagged.len() { tagged[i].0 } else { score.next_down() };
        let prev = *points.last().expect("non-empty");
        let p = RocPoint {
            threshold,
            fpr: fp as f64 / n_out,
            tpr: tp as f64 / n_in,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

/// P(s_in > s_out) + ½·P(s_in = s_out), computed from mid-ranks.
pub fn rank_auc(in_set_scores: &[f64], out_set_scores: &[f64]) -> Result<f64> {
    check_scores("in-set", in_set_scores)?;
    check_scores("out-of-set", out_set_scores)?;
    let mut all: Vec<(f64, bool)> = in_set_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_set_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * all[i..j].iter().filter(|t| t.1).count() as f64;
        i = j;
    }
    let (n_in, n_out) = (in_set_scores.len() as f64, out_set_scores.len() as f64);
    Ok((rank_sum - n_in * (n_in + 1.0) / 2.0) / (n_in * n_out))
}

/// Largest threshold among the scores (or just below the minimum) that still
/// accepts at least `target_tpr` of `in_set_scores`.
pub fn threshold_at_tpr(in_set_scores: &[f64], target_tpr: f64) -> Result<f64> {
    check_scores("in-set", in_set_scores)?;
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Precondition(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    let mut sorted = in_set_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mut i = 0;
    let mut best = sorted[n as usize - 1].next_down();
    while i < sorted.len() {
        let th = sorted[i];
        // count of scores strictly above th
        let above = i;
        if above as f64 / n >= target_tpr {
            best = th;
            break;
        }
        while i < sorted.len() && sorted[i] == th {
            i += 1;
        }
    }
    Ok(best)
}
