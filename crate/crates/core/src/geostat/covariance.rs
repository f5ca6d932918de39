use crate::error::{Error, Result};

/// Exponential covariance C(d) = sigma2 exp(-d / range) + tau2 1{d = 0}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialCovParams {
    nugget: f64,
    partial_sill: f64,
    range_km: f64,
}

impl ExponentialCovParams {
    pub fn new(nugget: f64, partial_sill: f64, range_km: f64) -> Result<Self> {
        let ok = nugget >= 0.0
            && partial_sill > 0.0
            && range_km > 0.0
            && nugget.is_finite()
            && partial_sill.is_finite()
            && range_km.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "covariance parameters need nugget >= 0, partial sill > 0, range > 0; got ({nugget}, {partial_sill}, {range_km})"
            )));
        }
        Ok(Self {
            nugget,
            partial_sill,
            range_km,
        })
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn partial_sill(&self) -> f64 {
        self.partial_sill
    }

    pub fn range_km(&self) -> f64 {
        self.range_km
    }

    pub fn total_sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    pub fn covariance(&self, d_km: f64) -> f64 {
        let spatial = self.partial_sill * (-d_km / self.range_km).exp();
        if d_km == 0.0 {
            spatial + self.nugget
        } else {
            spatial
        }
    }

    /// Semivariance tau2 + sigma2 (1 - exp(-h / range)) for h > 0.
    pub fn semivariance(&self, h_km: f64) -> f64 {
        self.nugget + self.partial_sill * (1.0 - (-h_km / self.range_km).exp())
    }

    pub fn to_log(&self) -> [f64; 3] {
        [
            self.nugget.max(f64::MIN_POSITIVE).ln(),
            self.partial_sill.ln(),
            self.range_km.ln(),
        ]
    }

    pub fn from_log(x: &[f64]) -> Result<Self> {
        Self::new(x[0].exp(), x[1].exp(), x[2].exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_and_semivariance_agree() {
        let p = ExponentialCovParams::new(1.0, 4.0, 200.0).unwrap();
        assert_eq!(p.covariance(0.0), 5.0);
        for h in [1.0, 50.0, 400.0] {
            assert!((p.semivariance(h) - (p.total_sill() - p.covariance(h))).abs() < 1e-12);
        }
        assert!(ExponentialCovParams::new(-1.0, 1.0, 1.0).is_err());
        assert!(ExponentialCovParams::new(0.0, 0.0, 1.0).is_err());
        assert!(ExponentialCovParams::new(0.0, 1.0, 0.0).is_err());
    }
}
