//! Two-parameter Weibull model used for the OpenMax tail fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weibull {
    pub shape: f64,
    pub scale: f64,
}

impl Weibull {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::Precondition(format!(
                "Weibull parameters must be positive and finite (shape {shape}, scale {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// `1 − exp(−(x/λ)^κ)` for `x ≥ 0`, zero below.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        -(-(x / self.scale).powf(self.shape)).exp_m1()
    }

    /// Maximum-likelihood fit.
    ///
    /// The scale has the closed form `λ = (Σ xᵢ^κ / n)^{1/κ}` given the shape,
    /// so only the profile equation
    ///
    /// ```text
    /// g(κ) = Σ xᵢ^κ ln xᵢ / Σ xᵢ^κ − 1/κ − mean(ln xᵢ) = 0
    /// ```
    ///
    /// is solved numerically. `g` is strictly increasing, which allows a
    /// bracketed Newton iteration. Samples are divided by their maximum
    /// first so the powers cannot overflow.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Precondition(format!(
                "Weibull fit needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::Precondition(format!(
                "Weibull samples must be positive and finite, found {bad}"
            )));
        }
        let max = samples.iter().copied().fold(f64::MIN, f64::max);
        let min = samples.iter().copied().fold(f64::MAX, f64::min);
        if max == min {
            return Err(Error::DegenerateFit(format!(
                "all {} samples equal {max}",
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let logs: Vec<f64> = samples.iter().map(|x| (x / max).ln()).collect();
        let mean_log = logs.iter().sum::<f64>() / n;

        // (g, g') at shape k
        let profile = |k: f64| {
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for &l in &logs {
                let w = (k * l).exp();
                s0 += w;
                s1 += w * l;
                s2 += w * l * l;
            }
            let ratio = s1 / s0;
            let g = ratio - 1.0 / k - mean_log;
            let dg = s2 / s0 - ratio * ratio + 1.0 / (k * k);
            (g, dg)
        };

        let (mut lo, mut hi) = (1e-3, 1.0);
        while profile(lo).0 > 0.0 {
            lo /= 10.0;
            if lo < 1e-12 {
                return Err(Error::DegenerateFit("shape bracket collapsed".into()));
            }
        }
        while profile(hi).0 < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::DegenerateFit(
                    "samples are too concentrated for a finite shape".into(),
                ));
            }
        }
        let mut k = 0.5 * (lo + hi);
        for _ in 0..MAX_ITER {
            let (g, dg) = profile(k);
            if g > 0.0 {
                hi = k;
            } else {
                lo = k;
            }
            let newton = k - g / dg;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - k).abs() <= TOL * k {
                k = next;
                break;
            }
            k = next;
        }
        let mean_pow = logs.iter().map(|l| (k * l).exp()).sum::<f64>() / n;
        let scale = max * mean_pow.powf(1.0 / k);
        Self::new(k, scale)
    }
}
