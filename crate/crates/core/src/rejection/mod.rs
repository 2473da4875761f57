//! Open-set decisions from model outputs: maximum softmax probability,
//! maximum logit score, and OpenMax.

mod openmax;
mod scores;
mod weibull;

pub use openmax::{
    default_alpha, fit_openmax, read_activations, write_activations, ActivationRecord, ClassModel,
    OpenMaxModel, Recalibration, DEFAULT_TAIL_SIZE,
};
pub use scores::{
    decide, mls_score, msp_score, openmax_decide, OpenSetDecision, OpenSetLabel, RejectionStrategy,
};
pub use weibull::Weibull;

use crate::error::{Error, Result};
use crate::model::ModelOutput;

/// Score where larger means "more in-set": max p, max h, or −p_o.
pub fn acceptance_score(
    strategy: RejectionStrategy,
    output: &ModelOutput,
    openmax: Option<&OpenMaxModel>,
) -> Result<f64> {
    match strategy {
        RejectionStrategy::Msp => Ok(msp_score(&output.probabilities)),
        RejectionStrategy::Mls => Ok(mls_score(&output.logits)),
        RejectionStrategy::OpenMax => {
            let model = openmax.ok_or_else(|| {
                Error::Usage("OPENMAX scoring requested without a fitted OpenMax model".into())
            })?;
            Ok(-model.recalibrate(&output.activation_vector)?.outlier_probability)
        }
    }
}
