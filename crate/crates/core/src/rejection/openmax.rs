//! OpenMax: per-class mean activation vectors with Weibull models of the
//! largest distances to them, used to move logit mass into an explicit
//! unknown class.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::weibull::Weibull;
use crate::error::{Error, Result};
use crate::model::softmax;

pub const DEFAULT_TAIL_SIZE: usize = 20;

pub fn default_alpha(num_classes: usize) -> usize {
    num_classes.min(3)
}

/// One scored training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub sample_id: String,
    pub true_label: usize,
    pub pred_label: usize,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub id: usize,
    pub mav: Vec<f64>,
    pub shape: f64,
    pub scale: f64,
}

impl ClassModel {
    pub fn weibull(&self) -> Weibull {
        Weibull {
            shape: self.shape,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxModel {
    pub classes: Vec<ClassModel>,
    pub tail_size: usize,
    pub alpha: usize,
}

/// Result of recalibrating one logit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Recalibration {
    /// `v̂_c = h_c·w_c` for the known classes.
    pub known: Vec<f64>,
    /// `v̂_0 = Σ_c h_c·(1 − w_c)`.
    pub unknown: f64,
    /// Softmax over `[v̂_0, v̂_1, …, v̂_N]`.
    pub probabilities: Vec<f64>,
    /// Unknown-class probability `p_o`.
    pub outlier_probability: f64,
}

impl Recalibration {
    /// The revised N+1 vector, unknown entry first.
    pub fn revised(&self) -> Vec<f64> {
        std::iter::once(self.unknown).chain(self.known.iter().copied()).collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fits one (MAV, Weibull) pair per class from correctly classified samples.
///
/// The Weibull model of class `c` is fitted to the `tail_size` largest
/// Euclidean distances between its samples and its MAV.
pub fn fit_openmax(records: &[ActivationRecord], tail_size: usize, alpha: usize) -> Result<OpenMaxModel> {
    let n = records
        .first()
        .map(|r| r.logits.len())
        .ok_or_else(|| Error::Precondition("no activation records to fit OpenMax".into()))?;
    if let Some(r) = records.iter().find(|r| r.logits.len() != n) {
        return Err(Error::Precondition(format!(
            "sample {} has {} logits, expected {n}",
            r.sample_id,
            r.logits.len()
        )));
    }
    if tail_size < 2 {
        return Err(Error::Config(format!("tail_size must be >= 2, got {tail_size}")));
    }
    if alpha == 0 || alpha > n {
        return Err(Error::Config(format!("alpha must lie in 1..={n}, got {alpha}")));
    }
    let mut classes = Vec::with_capacity(n);
    for c in 0..n {
        let correct: Vec<&[f64]> = records
            .iter()
            .filter(|r| r.true_label == c && r.pred_label == c)
            .map(|r| r.logits.as_slice())
            .collect();
        if correct.len() < tail_size {
            return Err(Error::Precondition(format!(
                "class {c} has {} correctly classified samples, fewer than the tail size {tail_size}",
                correct.len()
            )));
        }
        let mut mav = vec![0.0; n];
        for v in &correct {
            for (m, x) in mav.iter_mut().zip(*v) {
                *m += x;
            }
        }
        let count = correct.len() as f64;
        mav.iter_mut().for_each(|m| *m /= count);
        let mut distances: Vec<f64> = correct.iter().map(|v| euclidean(v, &mav)).collect();
        distances.sort_by(|a, b| b.total_cmp(a));
        distances.truncate(tail_size);
        let weibull = Weibull::fit(&distances).map_err(|e| match e {
            Error::DegenerateFit(msg) => Error::DegenerateFit(format!("class {c}: {msg}")),
            Error::Precondition(msg) => Error::DegenerateFit(format!("class {c}: {msg}")),
            other => other,
        })?;
        classes.push(ClassModel {
            id: c,
            mav,
            shape: weibull.shape,
            scale: weibull.scale,
        });
    }
    Ok(OpenMaxModel {
        classes,
        tail_size,
        alpha,
    })
}

impl OpenMaxModel {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Recalibrates a logit vector.
    ///
    /// Classes are ranked by descending logit (ties to the lower index). For
    /// rank `j = 1..=α` and class `c` at that rank,
    /// `w_c = 1 − ((α − j + 1)/α)·CDF_c(‖h − μ_c‖)`; all other classes keep
    /// `w_c = 1`.
    pub fn recalibrate(&self, logits: &[f64]) -> Result<Recalibration> {
        let n = self.num_classes();
        if logits.len() != n {
            return Err(Error::Precondition(format!(
                "logit vector has length {}, OpenMax model expects {n}",
                logits.len()
            )));
        }
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
        let mut weights = vec![1.0; n];
        let alpha = self.alpha.min(n);
        for (j, &c) in ranked.iter().take(alpha).enumerate() {
            let class = &self.classes[c];
            let d = euclidean(logits, &class.mav);
            let damping = (alpha - j) as f64 / alpha as f64;
            weights[c] = 1.0 - damping * class.weibull().cdf(d);
        }
        let known: Vec<f64> = logits.iter().zip(&weights).map(|(h, w)| h * w).collect();
        let unknown: f64 = logits.iter().zip(&weights).map(|(h, w)| h * (1.0 - w)).sum();
        let revised: Vec<f64> = std::iter::once(unknown).chain(known.iter().copied()).collect();
        let probabilities = softmax(&revised);
        Ok(Recalibration {
            outlier_probability: probabilities[0],
            known,
            unknown,
            probabilities,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.tail_size < 2 || model.alpha == 0 || model.alpha > model.classes.len() {
            return Err(Error::Config(format!(
                "invalid OpenMax parameters (tail_size {}, alpha {}, {} classes)",
                model.tail_size,
                model.alpha,
                model.classes.len()
            )));
        }
        for (i, c) in model.classes.iter().enumerate() {
            Weibull::new(c.shape, c.scale)?;
            if c.id != i || c.mav.len() != model.classes.len() {
                return Err(Error::Config(format!("malformed OpenMax class entry {i}")));
            }
        }
        Ok(model)
    }
}

/// Writes records as `sample_id,true_label,pred_label,logit_0..logit_{N-1}`.
pub fn write_activations<W: Write>(writer: W, records: &[ActivationRecord]) -> Result<()> {
    let n = records.first().map(|r| r.logits.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_id".to_string(), "true_label".into(), "pred_label".into()];
    header.extend((0..n).map(|i| format!("logit_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.sample_id.clone(), r.true_label.to_string(), r.pred_label.to_string()];
        row.extend(r.logits.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("activation log", e))
}

pub fn read_activations<R: Read>(reader: R) -> Result<Vec<ActivationRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    let fixed = ["sample_id", "true_label", "pred_label"];
    let n = header.len().saturating_sub(3);
    let expected_logits = (0..n).map(|i| format!("logit_{i}"));
    let valid = header.len() > 3
        && header.iter().take(3).eq(fixed.iter().copied())
        && header.iter().skip(3).map(str::to_string).eq(expected_logits);
    if !valid {
        return Err(Error::Config(format!(
            "activation log header must be sample_id,true_label,pred_label,logit_0..; got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let parse_err = |field: &str| Error::Config(format!("row {}: cannot parse {field}", line + 1));
        let true_label = row[1].parse().map_err(|_| parse_err("true_label"))?;
        let pred_label = row[2].parse().map_err(|_| parse_err("pred_label"))?;
        let logits = row
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("logit")))
            .collect::<Result<Vec<_>>>()?;
        records.push(ActivationRecord {
            sample_id: row[0].to_string(),
            true_label,
            pred_label,
            logits,
        });
    }
    Ok(records)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("activation CSV: {e}"))
}
