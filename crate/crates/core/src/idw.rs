//! Inverse distance weighting with a cross-validated decay exponent.

use maybe_rayon::prelude::*;

use crate::dataset::MonitorDataset;
use crate::error::{Error, Result};
use crate::eval::FoldPlan;
use crate::geo::{haversine_distance, LonLat};

pub const DEFAULT_PHI_GRID: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdwConfig {
    phi: f64,
    cutoff_km: Option<f64>,
}

impl IdwConfig {
    pub fn new(phi: f64, cutoff_km: Option<f64>) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Config(format!("IDW decay exponent must be positive, got {phi}")));
        }
        if let Some(c) = cutoff_km {
            if !(c > 0.0) {
                return Err(Error::Config(format!("IDW cutoff must be positive, got {c}")));
            }
        }
        Ok(Self { phi, cutoff_km })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn cutoff_km(&self) -> Option<f64> {
        self.cutoff_km
    }
}

/// Normalised weights d^-phi over the training points within the cutoff,
/// as (index, weight). Points at distance zero share all the weight.
pub fn idw_weights(train: &[(LonLat, f64)], target: LonLat, cfg: &IdwConfig) -> Result<Vec<(usize, f64)>> {
    let in_range: Vec<(usize, f64)> = train
        .iter()
        .enumerate()
        .map(|(i, &(loc, _))| (i, haversine_distance(loc, target)))
        .filter(|&(_, d)| cfg.cutoff_km.is_none_or(|c| d <= c))
        .collect();
    if in_range.is_empty() {
        return Err(Error::NoNeighbor);
    }
    let coincident: Vec<usize> = in_range.iter().filter(|&&(_, d)| d == 0.0).map(|&(i, _)| i).collect();
    if !coincident.is_empty() {
        let w = 1.0 / coincident.len() as f64;
        return Ok(coincident.into_iter().map(|i| (i, w)).collect());
    }
    // log-space keeps large exponents finite.
    let logs: Vec<f64> = in_range.iter().map(|&(_, d)| -cfg.phi * d.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(in_range.iter().zip(raw).map(|(&(i, _), w)| (i, w / total)).collect())
}

pub fn idw_predict(train: &[(LonLat, f64)], target: LonLat, cfg: &IdwConfig) -> Result<f64> {
    Ok(idw_weights(train, target, cfg)?.into_iter().map(|(i, w)| w * train[i].1).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdwTuning {
    pub best_phi: f64,
    /// (phi, pooled CV RMSE) in grid order.
    pub rmse: Vec<(f64, f64)>,
    /// Held-out site-days without any training neighbour in range.
    pub skipped: usize,
}

/// Site-level CV over all days, pooling squared errors. Ties go to the
/// smaller phi.
pub fn idw_tune_phi(data: &MonitorDataset, phi_grid: &[f64], cutoff_km: Option<f64>, folds: &FoldPlan) -> Result<IdwTuning> {
    if phi_grid.is_empty() {
        return Err(Error::Config("phi grid is empty".into()));
    }
    let cfgs = phi_grid.iter().map(|&p| IdwConfig::new(p, cutoff_km)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<_> = data.sites().iter().map(|s| s.id.clone()).collect();
    let fold_of = folds.fold_indices(&ids)?;
    let work: Vec<(usize, usize)> = (0..folds.k()).flat_map(|f| (0..data.n_days()).map(move |d| (f, d))).collect();
    let parts: Vec<(Vec<f64>, usize, usize)> = (&work)
        .into_par_iter()
        .map(|&(f, day)| {
            let obs = data.day(day);
            let train: Vec<(LonLat, f64)> = obs
                .iter()
                .filter(|&&(s, _)| fold_of[s] != f)
                .map(|&(s, v)| (data.sites()[s].loc, v))
                .collect();
            let mut sse = vec![0.0; cfgs.len()];
            let (mut n, mut skipped) = (0, 0);
            for &(s, v) in obs.iter().filter(|&&(s, _)| fold_of[s] == f) {
                let target = data.sites()[s].loc;
                let preds: Option<Vec<f64>> = cfgs.iter().map(|c| idw_predict(&train, target, c).ok()).collect();
                match preds {
                    Some(p) => {
                        for (acc, yhat) in sse.iter_mut().zip(p) {
                            *acc += (v - yhat).powi(2);
                        }
                        n += 1;
                    }
                    None => skipped += 1,
                }
            }
            (sse, n, skipped)
        })
        .collect();
    let mut sse = vec![0.0; cfgs.len()];
    let (mut n, mut skipped) = (0usize, 0usize);
    for (part, pn, ps) in parts {
        for (a, b) in sse.iter_mut().zip(part) {
            *a += b;
        }
        n += pn;
        skipped += ps;
    }
    if n == 0 {
        return Err(Error::InsufficientData("no held-out site-day could be predicted".into()));
    }
    let rmse: Vec<(f64, f64)> = phi_grid.iter().zip(&sse).map(|(&p, &s)| (p, (s / n as f64).sqrt())).collect();
    let best_phi = rmse
        .iter()
        .copied()
        .reduce(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
        .map(|(p, _)| p)
        .expect("non-empty grid");
    Ok(IdwTuning { best_phi, rmse, skipped })
}
