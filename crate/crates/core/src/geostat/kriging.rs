use maybe_rayon::prelude::*;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::{Observation, PointData, Study};
use crate::error::{Error, Result};
use crate::geo::{cross_distances, DistanceMatrix, LonLat};
use crate::linalg::{cholesky_with_jitter, log_det};
use crate::optimize::NelderMead;
use crate::prediction::Prediction;
use crate::regression::{ols_fit_day, LeastSquares, MeanSpec};

use super::covariance::ExponentialCovParams;
use super::transform::Transform;
use super::variogram::{empirical_semivariogram, fit_exponential_wls, wls_default_init, LogBounds, WlsFit, DEFAULT_BINS};

const JITTER: f64 = 1e-10;

/// How the covariance parameters of a daily model were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    /// Daily maximum likelihood.
    Ml,
    /// Fixed parameters supplied by the caller (e.g. shared across days).
    Fixed,
    /// Too few observations for ML; the fixed initial parameters were used.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct UkOptions {
    pub transform: Transform,
    pub optimizer: NelderMead,
}

impl Default for UkOptions {
    fn default() -> Self {
        Self {
            transform: Transform::Identity,
            optimizer: NelderMead {
                max_evals: 800,
                f_tol: 1e-7,
                x_tol: 1e-5,
            },
        }
    }
}

/// GLS quantities at fixed covariance parameters.
#[derive(Debug, Clone)]
struct Gls {
    chol: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    /// Sigma^-1 (y - X beta).
    alpha: DVector<f64>,
    sinv_x: DMatrix<f64>,
    /// (X' Sigma^-1 X)^-1.
    m_inv: DMatrix<f64>,
    loglik: f64,
}

fn covariance_matrix(p: &ExponentialCovParams, d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = d.map(|h| p.partial_sill() * (-h / p.range_km()).exp());
    for i in 0..s.nrows() {
        s[(i, i)] += p.nugget();
    }
    s
}

fn gls(p: &ExponentialCovParams, d: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Gls> {
    let n = y.len();
    let chol = cholesky_with_jitter(covariance_matrix(p, d), JITTER)?;
    let sinv_x = chol.solve(x);
    let m = x.transpose() * &sinv_x;
    let m_inv = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("GLS normal matrix is singular".into()))?
        .inverse();
    let beta = &m_inv * (sinv_x.transpose() * y);
    let r = y - x * &beta;
    let alpha = chol.solve(&r);
    let loglik = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det(&chol) + r.dot(&alpha));
    Ok(Gls {
        chol,
        beta,
        alpha,
        sinv_x,
        m_inv,
        loglik,
    })
}

/// Gaussian log-likelihood with beta profiled out by GLS.
pub fn uk_log_likelihood(p: &ExponentialCovParams, locs: &[LonLat], x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let d = DistanceMatrix::between(locs);
    Ok(gls(p, d.as_matrix(), x, y)?.loglik)
}

/// A fitted daily universal-kriging model, immutable after fitting.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    pub day: usize,
    pub spec: MeanSpec,
    pub params: ExponentialCovParams,
    pub kind: FitKind,
    pub transform: Transform,
    pub loglik: f64,
    /// Log-likelihood at the initial parameters.
    pub init_loglik: f64,
    locs: Vec<LonLat>,
    gls: Gls,
}

impl KrigingModel {
    /// GLS coefficients on the transformed scale.
    pub fn coefficients(&self) -> Vec<f64> {
        self.gls.beta.iter().copied().collect()
    }

    /// GLS covariance of the coefficients, (X' Sigma^-1 X)^-1.
    pub fn coefficient_covariance(&self) -> &DMatrix<f64> {
        &self.gls.m_inv
    }

    pub fn n_train(&self) -> usize {
        self.locs.len()
    }
}

fn prepare(obs: &[Observation], spec: &MeanSpec, transform: Transform) -> Result<(Vec<LonLat>, DMatrix<f64>, DVector<f64>)> {
    let locs: Vec<LonLat> = obs.iter().map(|o| o.point.loc).collect();
    let x = spec.design(obs.iter().map(|o| &o.point))?;
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| transform.forward(o.value)));
    Ok((locs, x, y))
}

/// GLS fit at fixed covariance parameters.
pub fn uk_fit_fixed(
    day: usize,
    obs: &[Observation],
    spec: &MeanSpec,
    params: ExponentialCovParams,
    transform: Transform,
) -> Result<KrigingModel> {
    fit_fixed_kind(day, obs, spec, params, transform, FitKind::Fixed)
}

fn fit_fixed_kind(
    day: usize,
    obs: &[Observation],
    spec: &MeanSpec,
    params: ExponentialCovParams,
    transform: Transform,
    kind: FitKind,
) -> Result<KrigingModel> {
    let q = spec.n_coefficients();
    if obs.len() < q {
        return Err(Error::InsufficientData(format!(
            "day {day}: {} observations for {q} coefficients",
            obs.len()
        )));
    }
    let (locs, x, y) = prepare(obs, spec, transform)?;
    LeastSquares::fit(&x, &y, &spec.column_names())?;
    let d = DistanceMatrix::between(&locs);
    let g = gls(&params, d.as_matrix(), &x, &y)?;
    Ok(KrigingModel {
        day,
        spec: spec.clone(),
        params,
        kind,
        transform,
        loglik: g.loglik,
        init_loglik: g.loglik,
        locs,
        gls: g,
    })
}

/// Daily ML fit over (log tau2, log sigma2, log range) by Nelder-Mead with
/// beta profiled by GLS. Starts from `init` and from `init` rescaled to the
/// day's OLS residual variance; never returns a likelihood below the one at
/// `init`. Days with fewer than q + 3 observations keep `init` (fallback).
pub fn uk_fit_ml(day: usize, obs: &[Observation], spec: &MeanSpec, init: ExponentialCovParams, opts: &UkOptions) -> Result<KrigingModel> {
    let q = spec.n_coefficients();
    if obs.len() < q + 3 {
        return fit_fixed_kind(day, obs, spec, init, opts.transform, FitKind::Fallback);
    }
    let (locs, x, y) = prepare(obs, spec, opts.transform)?;
    let ols = LeastSquares::fit(&x, &y, &spec.column_names())?;
    let dm = DistanceMatrix::between(&locs);
    let d = dm.as_matrix();
    let init_gls = gls(&init, d, &x, &y)?;

    let s2 = ols.rss / (obs.len() - q).max(1) as f64;
    let bounds = LogBounds::new(s2.max(init.total_sill()), dm.max());
    let objective = |v: &[f64]| -> f64 {
        if !bounds.contains(v) {
            return f64::INFINITY;
        }
        match ExponentialCovParams::from_log(v).and_then(|p| gls(&p, d, &x, &y)) {
            Ok(g) => -g.loglik,
            Err(_) => f64::INFINITY,
        }
    };
    let mut starts = vec![bounds.clamp(init.to_log())];
    if s2 > 0.0 {
        let f = s2 / init.total_sill();
        let scaled = ExponentialCovParams::new(init.nugget() * f, init.partial_sill() * f, init.range_km())?;
        starts.push(bounds.clamp(scaled.to_log()));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let m = opts.optimizer.minimize(objective, s, &[0.5, 0.5, 0.5]);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.0) {
            best = Some((m.value, m.x));
        }
    }
    let (params, g) = match best {
        Some((v, xb)) if -v > init_gls.loglik => {
            let p = ExponentialCovParams::from_log(&xb)?;
            (p, gls(&p, d, &x, &y)?)
        }
        _ => (init, init_gls.clone()),
    };
    Ok(KrigingModel {
        day,
        spec: spec.clone(),
        params,
        kind: FitKind::Ml,
        transform: opts.transform,
        loglik: g.loglik,
        init_loglik: init_gls.loglik,
        locs,
        gls: g,
    })
}

/// Universal-kriging predictions, back-transformed when a transform is set.
/// Variance is that of a new observation at the target, including the
/// inflation from estimating beta.
pub fn uk_predict(model: &KrigingModel, targets: &[PointData]) -> Result<Vec<Prediction>> {
    let tlocs: Vec<LonLat> = targets.iter().map(|t| t.loc).collect();
    let x0 = model.spec.design(targets)?;
    let p = &model.params;
    let c0 = cross_distances(&model.locs, &tlocs).map(|h| p.covariance(h));
    let sinv_c0 = model.gls.chol.solve(&c0);
    let g = &model.gls;
    let mean = &x0 * &g.beta + c0.transpose() * &g.alpha;
    let u = x0.transpose() - g.sinv_x.transpose() * &c0;
    let total = p.total_sill();
    Ok((0..targets.len())
        .map(|j| {
            let uj = u.column(j);
            let var = total - c0.column(j).dot(&sinv_c0.column(j)) + (uj.transpose() * &g.m_inv * uj)[0];
            model.transform.back(mean[j], var.max(0.0))
        })
        .collect())
}

/// Per-site means over days of same-day OLS residuals at the sites kept by
/// `keep`. Days where OLS cannot be fit are skipped.
pub fn time_averaged_residuals(
    study: &Study,
    spec: &MeanSpec,
    transform: Transform,
    keep: &(dyn Fn(usize) -> bool + Sync),
) -> Vec<(LonLat, f64)> {
    let per_day: Vec<Vec<(usize, f64)>> = (0..study.n_days())
        .into_par_iter()
        .map(|day| {
            let mut obs = study.day_observations(day, keep);
            for o in &mut obs {
                o.value = transform.forward(o.value);
            }
            match ols_fit_day(day, &obs, spec) {
                Ok(fit) => obs.iter().map(|o| o.site).zip(fit.residuals).collect(),
                Err(_) => Vec::new(),
            }
        })
        .collect();
    let n = study.monitors().n_sites();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for day in per_day {
        for (s, r) in day {
            sum[s] += r;
            count[s] += 1;
        }
    }
    (0..n)
        .filter(|&s| count[s] > 0)
        .map(|s| (study.monitors().sites()[s].loc, sum[s] / count[s] as f64))
        .collect()
}

/// WLS exponential fit to the variogram of time-averaged residuals, with
/// default binning. Used to initialise (or replace) daily ML fits.
pub fn shared_wls_params(residuals: &[(LonLat, f64)]) -> Result<WlsFit> {
    let vg = empirical_semivariogram(residuals, DEFAULT_BINS, None)?;
    fit_exponential_wls(&vg, wls_default_init(&vg)?)
}

/// Starting covariance for daily fits at the sites kept by `keep`: the WLS
/// fit to the variogram of time-averaged OLS residuals, or, when that
/// fails, an even nugget/sill split of their variance with a range of a
/// third of the site extent.
pub fn uk_initial_params(
    study: &Study,
    spec: &MeanSpec,
    transform: Transform,
    keep: &(dyn Fn(usize) -> bool + Sync),
) -> Result<ExponentialCovParams> {
    let residuals = time_averaged_residuals(study, spec, transform, keep);
    if let Ok(fit) = shared_wls_params(&residuals) {
        return Ok(fit.params);
    }
    if residuals.len() < 2 {
        return Err(Error::InsufficientData("fewer than two sites with residuals".into()));
    }
    let values: Vec<f64> = residuals.iter().map(|r| r.1).collect();
    let var = crate::linalg::sample_variance(&values).max(1e-6);
    let locs: Vec<LonLat> = residuals.iter().map(|r| r.0).collect();
    let extent = DistanceMatrix::between(&locs).max().max(1e-3);
    ExponentialCovParams::new(var / 2.0, var / 2.0, extent / 3.0)
}
