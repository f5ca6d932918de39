//! Variograms, exponential-covariance fitting and universal kriging.

mod covariance;
mod kriging;
mod transform;
mod variogram;

pub use covariance::ExponentialCovParams;
pub use kriging::{
    shared_wls_params, time_averaged_residuals, uk_fit_fixed, uk_initial_params, uk_fit_ml, uk_log_likelihood, uk_predict, FitKind,
    KrigingModel, UkOptions,
};
pub use transform::Transform;
pub use variogram::{
    empirical_semivariogram, fit_exponential_wls, wls_default_init, wls_objective, EmpiricalVariogram, VariogramBin,
    WlsFit, DEFAULT_BINS,
};
