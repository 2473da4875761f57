use serde::{Deserialize, Serialize};

/// Open-set rejection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectionStrategy {
    #[serde(rename = "MSP")]
    Msp,
    #[serde(rename = "MLS")]
    Mls,
    #[serde(rename = "OPENMAX")]
    OpenMax,
}

impl RejectionStrategy {
    pub const ALL: [RejectionStrategy; 3] = [Self::Msp, Self::Mls, Self::OpenMax];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Msp => "MSP",
            Self::Mls => "MLS",
            Self::OpenMax => "OPENMAX",
        }
    }
}

impl std::fmt::Display for RejectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RejectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MSP" => Ok(Self::Msp),
            "MLS" => Ok(Self::Mls),
            "OPENMAX" => Ok(Self::OpenMax),
            other => Err(format!("unknown rejection strategy {other}")),
        }
    }
}

/// Output of the open-set classifier: a known class or the rejection option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpenSetLabel {
    /// Zero-based in-set class.
    Known(usize),
    Unknown,
}

impl OpenSetLabel {
    /// One-based label in `{1, …, N+1}` with `N+1` the rejection option.
    pub fn phi(&self, num_classes: usize) -> usize {
        match self {
            Self::Known(c) => c + 1,
            Self::Unknown => num_classes + 1,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Self::Known(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetDecision {
    pub label: OpenSetLabel,
    pub score: f64,
    pub strategy: RejectionStrategy,
    pub threshold_used: f64,
}

/// Largest softmax probability; `NEG_INFINITY` for an empty vector.
pub fn msp_score(probabilities: &[f64]) -> f64 {
    probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest logit; `NEG_INFINITY` for an empty vector.
pub fn mls_score(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Accepts `predicted` iff `score > threshold` (MSP / MLS rule).
pub fn decide(
    score: f64,
    threshold: f64,
    predicted: usize,
    strategy: RejectionStrategy,
) -> OpenSetDecision {
    let label = if score > threshold {
        OpenSetLabel::Known(predicted)
    } else {
        OpenSetLabel::Unknown
    };
    OpenSetDecision {
        label,
        score,
        strategy,
        threshold_used: threshold,
    }
}

/// Accepts `predicted` iff the outlier probability is strictly below the threshold.
pub fn openmax_decide(outlier_probability: f64, threshold: f64, predicted: usize) -> OpenSetDecision {
    let label = if outlier_probability < threshold {
        OpenSetLabel::Known(predicted)
    } else {
        OpenSetLabel::Unknown
    };
    OpenSetDecision {
        label,
        score: outlier_probability,
        strategy: RejectionStrategy::OpenMax,
        threshold_used: threshold,
    }
}
