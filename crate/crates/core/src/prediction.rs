//! Point prediction with optional uncertainty, shared by every method.

/// `variance` and the interval are absent for methods without a natural
/// uncertainty estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: Option<f64>,
    pub lower95: Option<f64>,
    pub upper95: Option<f64>,
}

impl Prediction {
    pub fn point(mean: f64) -> Self {
        Self {
            mean,
            variance: None,
            lower95: None,
            upper95: None,
        }
    }

    /// Symmetric interval `mean ± mult * sqrt(variance)`.
    pub fn symmetric(mean: f64, variance: f64, mult: f64) -> Self {
        let variance = variance.max(0.0);
        let half = mult * variance.sqrt();
        Self {
            mean,
            variance: Some(variance),
            lower95: Some(mean - half),
            upper95: Some(mean + half),
        }
    }
}
