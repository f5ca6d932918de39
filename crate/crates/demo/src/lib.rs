//! Browser bindings: one synthetic day, mapped by IDW or by kriging, plus
//! the residual variogram and its weighted least-squares fit.

use airfuse::dataset::{PointData, Study};
use airfuse::geo::LonLat;
use airfuse::geostat::{
    empirical_semivariogram, fit_exponential_wls, uk_fit_fixed, uk_predict, wls_default_init, ExponentialCovParams,
    Transform,
};
use airfuse::idw::{idw_predict, IdwConfig};
use airfuse::ingest::{generate_synthetic, SyntheticConfig};
use airfuse::regression::{ols_fit_day, MeanSpec};
use wasm_bindgen::prelude::*;

const DAY: usize = 0;

fn js(e: airfuse::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    study: Study,
    truth: Vec<f64>,
    residuals: Vec<(LonLat, f64)>,
    targets: Vec<PointData>,
}

#[wasm_bindgen]
impl Demo {
    /// Synthetic day on a 30 x 45 grid of 20 km cells.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_sites: usize) -> Result<Demo, JsError> {
        let cfg = SyntheticConfig {
            n_sites,
            n_days: 1,
            n_rows: 30,
            n_cols: 45,
            cell_km: 20.0,
            n_covariates: 0,
            latent_on_grid: true,
            seed: seed.into(),
            ..SyntheticConfig::default()
        };
        let (monitors, grid, truth) = generate_synthetic(&cfg).map_err(js)?;
        let study = Study::new(monitors, grid).map_err(js)?;
        let spatial = truth.grid_spatial.clone().unwrap_or_default();
        let truth: Vec<f64> = truth.grid_mean.iter().zip(&spatial).map(|(m, s)| m + s).collect();
        let obs = study.day_observations(DAY, |_| true);
        let fit = ols_fit_day(DAY, &obs, &MeanSpec::cmaq_only()).map_err(js)?;
        let residuals = obs.iter().map(|o| o.point.loc).zip(fit.residuals).collect();
        let targets = study.grid_points(DAY);
        Ok(Demo {
            study,
            truth,
            residuals,
            targets,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn n_rows(&self) -> usize {
        self.study.grid().spec().n_rows()
    }

    #[wasm_bindgen(getter)]
    pub fn n_cols(&self) -> usize {
        self.study.grid().spec().n_cols()
    }

    /// Per site: x and y as fractions of the grid extent, then the value.
    pub fn sites(&self) -> Vec<f64> {
        let spec = self.study.grid().spec();
        let (x0, y0) = spec.map_coords(spec.origin());
        self.study
            .monitors()
            .day(DAY)
            .iter()
            .flat_map(|&(s, v)| {
                let (x, y) = spec.map_coords(self.study.monitors().sites()[s].loc);
                [(x - x0) / spec.width_km(), (y - y0) / spec.height_km(), v]
            })
            .collect()
    }

    /// Cell values in grid order, row 0 southernmost.
    pub fn model_output(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.cmaq).collect()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// IDW surface; a cutoff of 0 means none. Cells with no site in range
    /// are NaN.
    pub fn idw(&self, phi: f64, cutoff_km: f64) -> Result<Vec<f64>, JsError> {
        let cfg = IdwConfig::new(phi, (cutoff_km > 0.0).then_some(cutoff_km)).map_err(js)?;
        let train: Vec<(LonLat, f64)> = self
            .study
            .day_observations(DAY, |_| true)
            .iter()
            .map(|o| (o.point.loc, o.value))
            .collect();
        Ok(self
            .targets
            .iter()
            .map(|t| idw_predict(&train, t.loc, &cfg).unwrap_or(f64::NAN))
            .collect())
    }

    /// Universal kriging with the model output as the trend, at fixed
    /// covariance parameters. Returns the means followed by the standard
    /// deviations.
    pub fn kriging(&self, nugget: f64, partial_sill: f64, range_km: f64) -> Result<Vec<f64>, JsError> {
        let params = ExponentialCovParams::new(nugget, partial_sill, range_km).map_err(js)?;
        let obs = self.study.day_observations(DAY, |_| true);
        let model = uk_fit_fixed(DAY, &obs, &MeanSpec::cmaq_only(), params, Transform::Identity).map_err(js)?;
        let preds = uk_predict(&model, &self.targets).map_err(js)?;
        let mut out: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        out.extend(preds.iter().map(|p| p.variance.unwrap_or(f64::NAN).sqrt()));
        Ok(out)
    }

    /// Binned semivariogram of the day's OLS residuals: lag, gamma and
    /// pair count per bin.
    pub fn variogram(&self, n_bins: usize) -> Result<Vec<f64>, JsError> {
        let vg = empirical_semivariogram(&self.residuals, n_bins, None).map_err(js)?;
        Ok(vg.bins.iter().flat_map(|b| [b.lag_km, b.gamma, b.count as f64]).collect())
    }

    /// WLS exponential fit: nugget, partial sill, range.
    pub fn fit_variogram(&self, n_bins: usize) -> Result<Vec<f64>, JsError> {
        let vg = empirical_semivariogram(&self.residuals, n_bins, None).map_err(js)?;
        let fit = fit_exponential_wls(&vg, wls_default_init(&vg).map_err(js)?).map_err(js)?;
        let p = fit.params;
        Ok(vec![p.nugget(), p.partial_sill(), p.range_km()])
    }

    /// Leave-one-site-out RMSE of IDW at `phi`.
    pub fn idw_loo_rmse(&self, phi: f64) -> Result<f64, JsError> {
        let cfg = IdwConfig::new(phi, None).map_err(js)?;
        let obs = self.study.day_observations(DAY, |_| true);
        let pts: Vec<(LonLat, f64)> = obs.iter().map(|o| (o.point.loc, o.value)).collect();
        let mut sse = 0.0;
        for (i, &(loc, y)) in pts.iter().enumerate() {
            let rest: Vec<(LonLat, f64)> = pts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| *p).collect();
            sse += (idw_predict(&rest, loc, &cfg).map_err(js)? - y).powi(2);
        }
        Ok((sse / pts.len() as f64).sqrt())
    }
}
