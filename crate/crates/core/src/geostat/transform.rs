use serde::{Deserialize, Serialize};

use crate::linalg::z975;
use crate::prediction::Prediction;

/// Response transform applied before kriging. Predictions are mapped back
/// through quantiles, so the reported point value is the predictive median.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Sqrt,
    /// ln(y + 1) keeps zero concentrations finite.
    Log,
}

impl Transform {
    pub fn forward(&self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Sqrt => y.max(0.0).sqrt(),
            Transform::Log => (y + 1.0).ln(),
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        match self {
            Transform::Identity => t,
            Transform::Sqrt => t.max(0.0).powi(2),
            Transform::Log => t.exp() - 1.0,
        }
    }

    /// Gaussian prediction N(mean, variance) on the transformed scale mapped
    /// to the original scale: median and 95% interval by quantile mapping,
    /// variance of the back-transformed distribution.
    pub fn back(&self, mean: f64, variance: f64) -> Prediction {
        let variance = variance.max(0.0);
        if *self == Transform::Identity {
            return Prediction::symmetric(mean, variance, z975());
        }
        let half = z975() * variance.sqrt();
        let var = match self {
            Transform::Identity => unreachable!(),
            // y = t^2 with t ~ N(m, v), ignoring truncation at zero.
            Transform::Sqrt => 4.0 * mean * mean * variance + 2.0 * variance * variance,
            // y + 1 is lognormal.
            Transform::Log => (variance.exp() - 1.0) * (2.0 * mean + variance).exp(),
        };
        Prediction {
            mean: self.inverse(mean),
            variance: Some(var),
            lower95: Some(self.inverse(mean - half)),
            upper95: Some(self.inverse(mean + half)),
        }
    }
}
