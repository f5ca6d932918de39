//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use airfuse::downscaler::{DownscalerPriors, McmcConfig};
use airfuse::eval::{BenchmarkConfig, Method, Pooling, Strategy};
use airfuse::forest::ForestConfig;
use airfuse::geostat::{Transform, UkOptions};
use airfuse::idw::DEFAULT_PHI_GRID;
use airfuse::ingest::SyntheticConfig;
use anyhow::{Context, Result};
use serde::Deserialize;

/// Every key with its default. Shown by `--help` and kept in sync by a test.
pub const DEFAULT_CONFIG: &str = r#"seed = 1
workers = 0            # 0 = one per core
out = "out"

[data]
dir = "data"           # monitors.csv, grid.csv, grid-meta.csv
# monitors = "..."     # per-file overrides
# grid = "..."
# grid_meta = "..."

[model]
covariates = []        # empty = every grid covariate
transform = "identity" # identity | sqrt | log (ln(y + 1))

[selection]
k = 5
max_size = 0           # 0 = all candidates

[idw]
# phi = 2.0            # unset = tuned by site-level CV
phi_grid = [0.5, 1.0, 2.0, 4.0, 8.0]
# cutoff_km = 500.0

[uk]
shared_cov = false
max_evals = 800

[downscaler]
n_iter = 10000
n_burn = 5000
thin = 1
draws = 500
step = 0.5

[downscaler.priors]
beta_mean = [0.0, 1.0]
beta_var = [1e6, 1e6]
tau2 = { shape = 2.0, scale = 1.0 }
sigma2 = { shape = 2.0, scale = 1.0 }
phi_lo = 1e-4         # decay rate per km
phi_hi = 0.1

[forest]
n_trees = 500
# m_try = 5            # unset = floor(p / 3)
min_leaf = 5
# max_depth = 20

[cv]
k = 5
methods = ["ols-cmaq", "ols-covs", "ols-both", "idw", "uk-cmaq", "uk-covs", "uk-both", "downscaler", "rf"]
pooling = "grand"      # grand | day-averaged
strategies = ["overall", "nearby", "urban", "level", "distance", "longitude", "season"]

[synthetic]
n_sites = 200
n_days = 30
n_rows = 60
n_cols = 90
cell_km = 15.0
origin_lon = -100.0
origin_lat = 32.0
start_date = "2011-01-01"
intercept = 1.0
cmaq_slope = 0.8
n_covariates = 11
covariate_betas = []
nugget = 1.0
partial_sill = 4.0
range_km = 300.0
persistent_share = 0.5
cmaq_mean = 15.0
cmaq_amplitude = 6.0
cmaq_noise_sd = 0.5
covariate_noise_sd = 0.5
urban_fraction = 0.4
observation_prob = 1.0
latent_on_grid = false
seed = 1               # replaced by the run seed
"#;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub selection: SelectionConfig,
    pub idw: IdwSection,
    pub uk: UkSection,
    pub downscaler: DownscalerSection,
    pub forest: ForestSection,
    pub cv: CvSection,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 0,
            out: "out".into(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            selection: SelectionConfig::default(),
            idw: IdwSection::default(),
            uk: UkSection::default(),
            downscaler: DownscalerSection::default(),
            forest: ForestSection::default(),
            cv: CvSection::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub monitors: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub grid_meta: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: "data".into(),
            monitors: None,
            grid: None,
            grid_meta: None,
        }
    }
}

impl DataConfig {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.dir.join(name))
    }

    pub fn monitors_path(&self) -> PathBuf {
        self.path(&self.monitors, "monitors.csv")
    }

    pub fn grid_path(&self) -> PathBuf {
        self.path(&self.grid, "grid.csv")
    }

    pub fn grid_meta_path(&self) -> PathBuf {
        self.path(&self.grid_meta, "grid-meta.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub covariates: Vec<String>,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub k: usize,
    pub max_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 5, max_size: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdwSection {
    pub phi: Option<f64>,
    pub phi_grid: Vec<f64>,
    pub cutoff_km: Option<f64>,
}

impl Default for IdwSection {
    fn default() -> Self {
        Self {
            phi: None,
            phi_grid: DEFAULT_PHI_GRID.to_vec(),
            cutoff_km: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UkSection {
    pub shared_cov: bool,
    pub max_evals: usize,
}

impl Default for UkSection {
    fn default() -> Self {
        Self {
            shared_cov: false,
            max_evals: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownscalerSection {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub draws: usize,
    pub step: f64,
    pub priors: DownscalerPriors,
}

impl Default for DownscalerSection {
    fn default() -> Self {
        let m = McmcConfig::default();
        Self {
            n_iter: m.n_iter,
            n_burn: m.n_burn,
            thin: m.thin,
            draws: 500,
            step: m.step,
            priors: DownscalerPriors::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub m_try: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestSection {
    fn default() -> Self {
        let f = ForestConfig::default();
        Self {
            n_trees: f.n_trees,
            m_try: f.m_try,
            min_leaf: f.min_leaf,
            max_depth: f.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
    pub methods: Vec<String>,
    pub pooling: String,
    pub strategies: Vec<String>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            k: 5,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            pooling: "grand".into(),
            strategies: Strategy::ALL.iter().map(|s| s.name().to_string()).collect(),
        }
    }
}

pub fn parse_pooling(s: &str) -> Result<Pooling> {
    match s {
        "grand" => Ok(Pooling::Grand),
        "day-averaged" => Ok(Pooling::DayAveraged),
        _ => anyhow::bail!("unknown pooling `{s}`; expected grand or day-averaged"),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            n_iter: self.downscaler.n_iter,
            n_burn: self.downscaler.n_burn,
            thin: self.downscaler.thin,
            step: self.downscaler.step,
            seed: self.seed,
            ..McmcConfig::default()
        }
    }

    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.forest.n_trees,
            m_try: self.forest.m_try,
            min_leaf: self.forest.min_leaf,
            max_depth: self.forest.max_depth,
            bootstrap: true,
            seed: self.seed,
        }
    }

    pub fn uk_options(&self) -> UkOptions {
        let mut o = UkOptions {
            transform: self.model.transform,
            ..UkOptions::default()
        };
        o.optimizer.max_evals = self.uk.max_evals;
        o
    }

    pub fn benchmark(&self, methods: &[Method]) -> BenchmarkConfig {
        BenchmarkConfig {
            methods: methods.to_vec(),
            covariates: self.model.covariates.clone(),
            idw_phi: self.idw.phi,
            idw_phi_grid: self.idw.phi_grid.clone(),
            idw_cutoff_km: self.idw.cutoff_km,
            uk: self.uk_options(),
            uk_shared_cov: self.uk.shared_cov,
            mcmc: self.mcmc(),
            priors: self.downscaler.priors,
            downscaler_draws: self.downscaler.draws,
            forest: self.forest(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match() {
        let parsed: RunConfig = toml::from_str(DEFAULT_CONFIG).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[forest]\nntrees = 3").is_err());
    }
}
