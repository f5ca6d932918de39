//! Synthetic monitor/grid datasets with known generating parameters.
//!
//! Each day draws a zero-mean Gaussian field with exponential covariance
//! at the monitor sites (exact Cholesky), adds a linear mean in the
//! model output and covariates, and adds independent nugget noise.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use maybe_rayon::prelude::*;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Calendar, GridDataset, MonitorDataset, Site};
use crate::error::{Error, Result};
use crate::geo::{DistanceMatrix, GridSpec, LonLat, SiteId};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sites: usize,
    pub n_days: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_km: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub start_date: NaiveDate,
    pub intercept: f64,
    pub cmaq_slope: f64,
    /// Number of covariate columns (`x1`, `x2`, ...).
    pub n_covariates: usize,
    /// Coefficients for the first covariates; the rest are zero.
    pub covariate_betas: Vec<f64>,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_km: f64,
    /// Share of the partial sill carried by a field shared by all days.
    /// Each day's field stays marginally exponential with the configured
    /// sill and range; days are correlated when this is positive.
    pub persistent_share: f64,
    pub cmaq_mean: f64,
    pub cmaq_amplitude: f64,
    pub cmaq_noise_sd: f64,
    pub covariate_noise_sd: f64,
    pub urban_fraction: f64,
    /// Probability that a site reports on a given day.
    pub observation_prob: f64,
    /// Also draw the latent field at grid-cell centroids (jointly with the
    /// sites). Cost grows cubically with sites + cells.
    pub latent_on_grid: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sites: 200,
            n_days: 30,
            n_rows: 60,
            n_cols: 90,
            cell_km: 15.0,
            origin_lon: -100.0,
            origin_lat: 32.0,
            start_date: NaiveDate::from_ymd_opt(2011, 1, 1).expect("valid date"),
            intercept: 1.0,
            cmaq_slope: 0.8,
            n_covariates: 11,
            covariate_betas: Vec::new(),
            nugget: 1.0,
            partial_sill: 4.0,
            range_km: 300.0,
            persistent_share: 0.5,
            cmaq_mean: 15.0,
            cmaq_amplitude: 6.0,
            cmaq_noise_sd: 0.5,
            covariate_noise_sd: 0.5,
            urban_fraction: 0.4,
            observation_prob: 1.0,
            latent_on_grid: false,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sites < 3 {
            return bad(format!("n_sites must be at least 3, got {}", self.n_sites));
        }
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        if !(self.nugget >= 0.0 && self.partial_sill >= 0.0 && self.nugget.is_finite() && self.partial_sill.is_finite()) {
            return bad("variances must be finite and non-negative".into());
        }
        if !(self.range_km > 0.0 && self.range_km.is_finite()) {
            return bad(format!("range_km must be positive, got {}", self.range_km));
        }
        if !(0.0..=1.0).contains(&self.persistent_share) {
            return bad("persistent_share must lie in [0, 1]".into());
        }
        if !(self.observation_prob > 0.0 && self.observation_prob <= 1.0) {
            return bad("observation_prob must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.urban_fraction) {
            return bad("urban_fraction must lie in [0, 1]".into());
        }
        if self.covariate_betas.len() > self.n_covariates {
            return bad(format!(
                "{} covariate betas given for {} covariates",
                self.covariate_betas.len(),
                self.n_covariates
            ));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.n_rows, self.n_cols, self.cell_km, LonLat::new(self.origin_lon, self.origin_lat)?)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.n_covariates).map(|k| format!("x{k}")).collect()
    }

    fn beta(&self, k: usize) -> f64 {
        self.covariate_betas.get(k).copied().unwrap_or(0.0)
    }
}

/// Generating truth. Arrays are laid out `[day][site]` / `[day][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub config: SyntheticConfig,
    pub site_mean: Vec<f64>,
    pub site_spatial: Vec<f64>,
    pub grid_mean: Vec<f64>,
    pub grid_spatial: Option<Vec<f64>>,
    /// Draws below zero that were clamped to 0.
    pub n_clamped: usize,
}

impl SyntheticTruth {
    pub fn site_mean(&self, day: usize, site: usize) -> f64 {
        self.site_mean[day * self.config.n_sites + site]
    }

    pub fn site_spatial(&self, day: usize, site: usize) -> f64 {
        self.site_spatial[day * self.config.n_sites + site]
    }

    pub fn write_csv(&self, sites: &[Site], path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["site_id", "date", "mean", "spatial"])?;
        let cal = Calendar::new(self.config.start_date, self.config.n_days)?;
        for day in 0..self.config.n_days {
            for (s, site) in sites.iter().enumerate() {
                w.write_record([
                    site.id.to_string(),
                    cal.date(day).to_string(),
                    self.site_mean(day, s).to_string(),
                    self.site_spatial(day, s).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct DayDraw {
    cmaq: Vec<f64>,
    covs: Vec<f64>,
    site_mean: Vec<f64>,
    site_spatial: Vec<f64>,
    grid_mean: Vec<f64>,
    grid_spatial: Vec<f64>,
    obs: Vec<(usize, f64)>,
    clamped: usize,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(MonitorDataset, GridDataset, SyntheticTruth)> {
    config.validate()?;
    let spec = config.grid_spec()?;
    let calendar = Calendar::new(config.start_date, config.n_days)?;
    let (w, h) = (spec.width_km(), spec.height_km());

    let mut site_rng = rng_from(derive_seed(config.seed, "sites", 0));
    let mut sites = Vec::with_capacity(config.n_sites);
    let mut site_xy = Vec::with_capacity(config.n_sites);
    for i in 0..config.n_sites {
        let x = site_rng.random::<f64>() * w;
        let y = site_rng.random::<f64>() * h;
        site_xy.push((x, y));
        sites.push(Site {
            id: SiteId::new(format!("S{:04}", i + 1))?,
            loc: spec.unproject(x, y)?,
            urban: site_rng.random::<f64>() < config.urban_fraction,
        });
    }
    let site_cells: Vec<usize> = sites
        .iter()
        .map(|s| spec.link_to_cell(s.loc).map(|(r, c)| spec.cell_index(r, c)))
        .collect::<Result<_>>()?;

    let n_cells = spec.n_cells();
    let centroids = spec.centroids();
    let mut field_locs: Vec<LonLat> = sites.iter().map(|s| s.loc).collect();
    if config.latent_on_grid {
        field_locs.extend(centroids.iter().copied());
    }
    let chol = latent_factor(&field_locs, config)?;
    let persistent: Vec<f64> = {
        let mut rng = rng_from(derive_seed(config.seed, "persistent", 0));
        (0..field_locs.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let (keep_share, day_share) = (config.persistent_share.sqrt(), (1.0 - config.persistent_share).sqrt());

    let cell_xy: Vec<(f64, f64)> = (0..n_cells)
        .map(|i| {
            let (r, c) = spec.cell_row_col(i);
            ((c as f64 + 0.5) * spec.cell_km(), (r as f64 + 0.5) * spec.cell_km())
        })
        .collect();
    let p = config.n_covariates;
    let tau = config.nugget.sqrt();

    let draw_day = |day: usize| -> DayDraw {
        let mut rng = rng_from(derive_seed(config.seed, "day", day as u64));
        let two_pi = std::f64::consts::TAU;
        let (a, b): (f64, f64) = (rng.random::<f64>() * two_pi, rng.random::<f64>() * two_pi);
        let cmaq: Vec<f64> = cell_xy
            .iter()
            .map(|&(x, y)| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                config.cmaq_mean
                    + config.cmaq_amplitude * (two_pi * x / w + a).sin() * (two_pi * y / h + b).sin()
                    + config.cmaq_noise_sd * noise
            })
            .collect();
        let phases: Vec<(f64, f64, f64, f64)> = (0..p)
            .map(|k| {
                let fx = 1.0 + (k % 2) as f64;
                let fy = 1.0 + ((k / 2) % 2) as f64;
                (fx, fy, rng.random::<f64>() * two_pi, rng.random::<f64>() * two_pi)
            })
            .collect();
        let mut covs = Vec::with_capacity(n_cells * p);
        for &(x, y) in &cell_xy {
            for &(fx, fy, c, d) in &phases {
                let noise: f64 = StandardNormal.sample(&mut rng);
                covs.push((two_pi * fx * x / w + c).sin() * (two_pi * fy * y / h + d).cos() + config.covariate_noise_sd * noise);
            }
        }
        let mean_at = |cell: usize| -> f64 {
            config.intercept
                + config.cmaq_slope * cmaq[cell]
                + (0..p).map(|k| config.beta(k) * covs[cell * p + k]).sum::<f64>()
        };

        let latent = match &chol {
            Some(l) => {
                let z = DVector::from_fn(field_locs.len(), |i, _| {
                    let fresh: f64 = StandardNormal.sample(&mut rng);
                    keep_share * persistent[i] + day_share * fresh
                });
                (l * z).data.into()
            }
            None => vec![0.0; field_locs.len()],
        };
        let n = config.n_sites;
        let site_mean: Vec<f64> = site_cells.iter().map(|&c| mean_at(c)).collect();
        let site_spatial = latent[..n].to_vec();
        let grid_mean: Vec<f64> = (0..n_cells).map(mean_at).collect();
        let grid_spatial = if config.latent_on_grid { latent[n..].to_vec() } else { Vec::new() };

        let mut obs = Vec::with_capacity(n);
        let mut clamped = 0;
        for s in 0..n {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let reported = rng.random::<f64>() < config.observation_prob;
            let mut y = site_mean[s] + site_spatial[s] + tau * eps;
            if y < 0.0 {
                y = 0.0;
                clamped += 1;
            }
            if reported {
                obs.push((s, y));
            }
        }
        DayDraw {
            cmaq,
            covs,
            site_mean,
            site_spatial,
            grid_mean,
            grid_spatial,
            obs,
            clamped,
        }
    };

    let days: Vec<DayDraw> = (0..config.n_days).into_par_iter().map(draw_day).collect();

    let mut cmaq = Vec::with_capacity(n_cells * config.n_days);
    let mut covs = Vec::with_capacity(n_cells * config.n_days * p);
    let mut truth = SyntheticTruth {
        config: config.clone(),
        site_mean: Vec::new(),
        site_spatial: Vec::new(),
        grid_mean: Vec::new(),
        grid_spatial: config.latent_on_grid.then(Vec::new),
        n_clamped: 0,
    };
    let mut observations = Vec::new();
    for (day, d) in days.into_iter().enumerate() {
        cmaq.extend(d.cmaq);
        covs.extend(d.covs);
        truth.site_mean.extend(d.site_mean);
        truth.site_spatial.extend(d.site_spatial);
        truth.grid_mean.extend(d.grid_mean);
        if let Some(g) = truth.grid_spatial.as_mut() {
            g.extend(d.grid_spatial);
        }
        truth.n_clamped += d.clamped;
        observations.extend(d.obs.into_iter().map(|(s, v)| (s, day, v)));
    }

    let monitors = MonitorDataset::new(sites, calendar, observations)?;
    let grid = GridDataset::new(spec, calendar, config.covariate_names(), cmaq, covs)?;
    Ok((monitors, grid, truth))
}

/// Lower Cholesky factor of sigma^2 exp(-d/phi) plus 1e-8 sigma^2 jitter,
/// or `None` when the field has zero variance.
fn latent_factor(locs: &[LonLat], config: &SyntheticConfig) -> Result<Option<DMatrix<f64>>> {
    if config.partial_sill == 0.0 {
        return Ok(None);
    }
    let d = DistanceMatrix::between(locs);
    let mut cov = d.as_matrix().map(|d| config.partial_sill * (-d / config.range_km).exp());
    for i in 0..locs.len() {
        cov[(i, i)] += 1e-8 * config.partial_sill;
    }
    Cholesky::new(cov)
        .map(|c| Some(c.unpack()))
        .ok_or_else(|| Error::Generation("site covariance is not positive definite after jitter".into()))
}

/// Writes `monitors.csv`, `grid.csv`, `grid-meta.csv` and `truth.csv` to `dir`.
pub fn write_synthetic(
    dir: impl AsRef<Path>,
    monitors: &MonitorDataset,
    grid: &GridDataset,
    truth: &SyntheticTruth,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    super::write_monitor_csv(monitors, dir.join("monitors.csv"))?;
    super::write_grid_csv(grid, dir.join("grid.csv"))?;
    super::write_grid_meta(grid.spec(), dir.join("grid-meta.csv"))?;
    truth.write_csv(monitors.sites(), dir.join("truth.csv"))?;
    let mut params = File::create(dir.join("truth-params.csv"))?;
    let c = &truth.config;
    writeln!(params, "intercept,cmaq_slope,nugget,partial_sill,range_km,seed,n_clamped")?;
    writeln!(
        params,
        "{},{},{},{},{},{},{}",
        c.intercept, c.cmaq_slope, c.nugget, c.partial_sill, c.range_km, c.seed, truth.n_clamped
    )?;
    Ok(())
}
