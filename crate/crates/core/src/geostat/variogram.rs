use crate::error::{Error, Result};
use crate::geo::{DistanceMatrix, LonLat};
use crate::optimize::NelderMead;

use super::covariance::ExponentialCovParams;

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramBin {
    /// Mean pair distance in the bin.
    pub lag_km: f64,
    pub gamma: f64,
    pub count: usize,
}

/// Binned Matheron estimator. Bins are non-empty with increasing lags.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
    pub max_lag_km: f64,
}

/// Equal-width bins over [0, max_lag]; pairs beyond `max_lag` are dropped.
/// The default lag is half the largest pairwise distance.
pub fn empirical_semivariogram(points: &[(LonLat, f64)], n_bins: usize, max_lag_km: Option<f64>) -> Result<EmpiricalVariogram> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("variogram needs 2 points, got {}", points.len())));
    }
    if n_bins == 0 {
        return Err(Error::Config("variogram needs at least one bin".into()));
    }
    let locs: Vec<LonLat> = points.iter().map(|p| p.0).collect();
    let d = DistanceMatrix::between(&locs);
    let dmax = d.max();
    if dmax == 0.0 {
        return Err(Error::DegenerateGeometry("all variogram points are co-located".into()));
    }
    let max_lag = max_lag_km.unwrap_or(dmax / 2.0);
    if !(max_lag > 0.0) {
        return Err(Error::Config(format!("maximum lag must be positive, got {max_lag}")));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_d = vec![0.0; n_bins];
    let mut sum_sq = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let h = d.get(i, j);
            if h > max_lag {
                continue;
            }
            let b = ((h / width) as usize).min(n_bins - 1);
            sum_d[b] += h;
            sum_sq[b] += (points[i].1 - points[j].1).powi(2);
            count[b] += 1;
        }
    }
    let bins = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag_km: sum_d[b] / count[b] as f64,
            gamma: sum_sq[b] / (2.0 * count[b] as f64),
            count: count[b],
        })
        .collect();
    Ok(EmpiricalVariogram {
        bins,
        max_lag_km: max_lag,
    })
}

/// Cressie-weighted objective sum N_h (gamma_h - model(h))^2 / model(h)^2.
pub fn wls_objective(vg: &EmpiricalVariogram, p: &ExponentialCovParams) -> f64 {
    vg.bins
        .iter()
        .map(|b| {
            let m = p.semivariance(b.lag_km);
            b.count as f64 * (b.gamma - m).powi(2) / (m * m)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsFit {
    pub params: ExponentialCovParams,
    pub objective: f64,
    pub init_objective: f64,
}

/// Starting values read off the variogram: total sill from the upper third
/// of bins split 1:3 into nugget and partial sill, range a third of the
/// largest lag.
pub fn wls_default_init(vg: &EmpiricalVariogram) -> Result<ExponentialCovParams> {
    let tail = &vg.bins[vg.bins.len() * 2 / 3..];
    let sill = tail.iter().map(|b| b.gamma).sum::<f64>() / tail.len().max(1) as f64;
    let sill = if sill > 0.0 { sill } else { 1.0 };
    ExponentialCovParams::new(0.25 * sill, 0.75 * sill, vg.max_lag_km / 3.0)
}

pub fn fit_exponential_wls(vg: &EmpiricalVariogram, init: ExponentialCovParams) -> Result<WlsFit> {
    if vg.bins.len() < 3 {
        return Err(Error::InsufficientData(format!("WLS fit needs 3 bins, got {}", vg.bins.len())));
    }
    let init_objective = wls_objective(vg, &init);
    let scale = vg.bins.iter().map(|b| b.gamma).fold(0.0, f64::max).max(init.total_sill());
    let bounds = LogBounds::new(scale, vg.max_lag_km);
    let f = |x: &[f64]| {
        if !bounds.contains(x) {
            return f64::INFINITY;
        }
        match ExponentialCovParams::from_log(x) {
            Ok(p) => wls_objective(vg, &p),
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = bounds.clamp(init.to_log());
    let nm = NelderMead {
        max_evals: 4000,
        f_tol: 1e-14,
        x_tol: 1e-10,
    };
    let mut best = nm.minimize(f, &x0, &[0.5, 0.5, 0.5]);
    // A restart from the optimum shakes off premature simplex collapse.
    let again = nm.minimize(f, &best.x.clone(), &[0.1, 0.1, 0.1]);
    if again.value < best.value {
        best = again;
    }
    let fail = || Error::FitFailure {
        nugget: init.nugget(),
        partial_sill: init.partial_sill(),
        range_km: init.range_km(),
    };
    if !best.value.is_finite() {
        return Err(fail());
    }
    let params = ExponentialCovParams::from_log(&best.x)?;
    let objective = wls_objective(vg, &params);
    if init_objective.is_finite() && objective > init_objective {
        return Ok(WlsFit {
            params: init,
            objective: init_objective,
            init_objective,
        });
    }
    Ok(WlsFit {
        params,
        objective,
        init_objective,
    })
}

/// Box constraints on (log tau2, log sigma2, log range).
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogBounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl LogBounds {
    /// Variances within [1e-10, 1e3] times `var_scale`; range within
    /// [1e-4, 1e2] times `dist_scale` (at least 1 m).
    pub(crate) fn new(var_scale: f64, dist_scale: f64) -> Self {
        let v = var_scale.max(1e-12).ln();
        let d = dist_scale.max(1e-3).ln();
        Self {
            lo: [v + 1e-10f64.ln(), v + 1e-10f64.ln(), (d + 1e-4f64.ln()).max(1e-3f64.ln())],
            hi: [v + 1e3f64.ln(), v + 1e3f64.ln(), d + 1e2f64.ln()],
        }
    }

    pub(crate) fn contains(&self, x: &[f64]) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    pub(crate) fn clamp(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| x[i].clamp(self.lo[i], self.hi[i]))
    }
}
