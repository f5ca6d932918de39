//! Site-level cross-validation of every method on a study.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use maybe_rayon::prelude::*;

use super::folds::{make_site_folds, FoldPlan};
use super::metrics::PredictionRecord;
use crate::dataset::{Observation, PointData, Study};
use crate::downscaler::{downscaler_fit, downscaler_predict, DownscalerPriors, McmcConfig, MIN_OBSERVATIONS};
use crate::error::{Error, Result};
use crate::forest::{feature_row, rf_predict, rf_train, ForestConfig, TrainingRow};
use crate::geo::LonLat;
use crate::geostat::{FitKind, uk_fit_fixed, uk_fit_ml, uk_initial_params, uk_predict, ExponentialCovParams, UkOptions};
use crate::idw::{idw_predict, idw_tune_phi, IdwConfig, DEFAULT_PHI_GRID};
use crate::prediction::Prediction;
use crate::regression::{ols_fit_day, ols_predict, MeanKind, MeanSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ols(MeanKind),
    Idw,
    Uk(MeanKind),
    Downscaler,
    Forest,
}

impl Method {
    /// Table order.
    pub const ALL: [Method; 9] = [
        Method::Ols(MeanKind::CmaqOnly),
        Method::Ols(MeanKind::CovsOnly),
        Method::Ols(MeanKind::CmaqPlusCovs),
        Method::Idw,
        Method::Uk(MeanKind::CmaqOnly),
        Method::Uk(MeanKind::CovsOnly),
        Method::Uk(MeanKind::CmaqPlusCovs),
        Method::Downscaler,
        Method::Forest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols(MeanKind::CmaqOnly) => "ols-cmaq",
            Method::Ols(MeanKind::CovsOnly) => "ols-covs",
            Method::Ols(MeanKind::CmaqPlusCovs) => "ols-both",
            Method::Idw => "idw",
            Method::Uk(MeanKind::CmaqOnly) => "uk-cmaq",
            Method::Uk(MeanKind::CovsOnly) => "uk-covs",
            Method::Uk(MeanKind::CmaqPlusCovs) => "uk-both",
            Method::Downscaler => "downscaler",
            Method::Forest => "rf",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Ols(MeanKind::CmaqOnly) => "OLS (CMAQ)",
            Method::Ols(MeanKind::CovsOnly) => "OLS (Covs)",
            Method::Ols(MeanKind::CmaqPlusCovs) => "OLS (CMAQ + Covs)",
            Method::Idw => "IDW",
            Method::Uk(MeanKind::CmaqOnly) => "UK (CMAQ)",
            Method::Uk(MeanKind::CovsOnly) => "UK (Covs)",
            Method::Uk(MeanKind::CmaqPlusCovs) => "UK (CMAQ + Covs)",
            Method::Downscaler => "Downscaler (CMAQ)",
            Method::Forest => "RF (CMAQ + Covs)",
        }
    }

    fn daily(self) -> bool {
        self != Method::Forest
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s.trim()).ok_or_else(|| {
            let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method `{s}`; expected one of {}", known.join(", ")))
        })
    }
}

/// Table position of a method name; names outside the built-in set sort
/// after them.
pub fn method_rank(name: &str) -> usize {
    Method::ALL.iter().position(|m| m.name() == name).unwrap_or(Method::ALL.len())
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    /// Covariates for the covariate-based methods; empty means all.
    pub covariates: Vec<String>,
    /// Fixed IDW exponent; `None` tunes it on each fold's training sites.
    pub idw_phi: Option<f64>,
    pub idw_phi_grid: Vec<f64>,
    pub idw_cutoff_km: Option<f64>,
    pub uk: UkOptions,
    /// Use one covariance per fold (from time-averaged residuals) for all
    /// days instead of daily ML.
    pub uk_shared_cov: bool,
    pub priors: DownscalerPriors,
    pub mcmc: McmcConfig,
    pub downscaler_draws: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            covariates: Vec::new(),
            idw_phi: None,
            idw_phi_grid: DEFAULT_PHI_GRID.to_vec(),
            idw_cutoff_km: None,
            uk: UkOptions::default(),
            uk_shared_cov: false,
            priors: DownscalerPriors::default(),
            mcmc: McmcConfig::default(),
            downscaler_draws: 500,
            forest: ForestConfig::default(),
            seed: 1,
        }
    }
}

/// A fold/day where a method degraded or dropped held-out site-days.
#[derive(Debug, Clone, PartialEq)]
pub struct RunNote {
    pub method: String,
    pub fold: usize,
    pub date: Option<NaiveDate>,
    /// Held-out site-days without a prediction.
    pub skipped: usize,
    /// Whether predictions came from a degraded mode.
    pub fallback: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub folds: FoldPlan,
    /// Sorted by method table order, then site, then date.
    pub records: Vec<PredictionRecord>,
    pub notes: Vec<RunNote>,
    /// IDW exponent used per fold.
    pub idw_phi: Vec<f64>,
}

/// Per-fold state shared by that fold's daily units.
struct FoldSetup {
    train: Vec<bool>,
    idw_phi: Option<f64>,
    uk_init: Vec<(MeanKind, std::result::Result<ExponentialCovParams, String>)>,
}

struct UnitResult {
    records: Vec<PredictionRecord>,
    notes: Vec<RunNote>,
}

pub fn run_benchmark(study: &Study, folds: &FoldPlan, cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    cfg.priors.validate()?;
    cfg.mcmc.validate()?;
    let monitors = study.monitors();
    let ids: Vec<_> = monitors.sites().iter().map(|s| s.id.clone()).collect();
    let fold_of = folds.fold_indices(&ids)?;
    let specs = MethodSpecs::new(study, &cfg.covariates, &cfg.methods)?;

    let setups: Vec<FoldSetup> = (0..folds.k())
        .into_par_iter()
        .map(|f| fold_setup(study, &fold_of, f, cfg, &specs))
        .collect::<Result<_>>()?;

    let mut units: Vec<(usize, Method, Option<usize>)> = Vec::new();
    for f in 0..folds.k() {
        for &m in &cfg.methods {
            if m.daily() {
                units.extend((0..study.n_days()).map(|d| (f, m, Some(d))));
            } else {
                units.push((f, m, None));
            }
        }
    }
    let results: Vec<UnitResult> = (&units)
        .into_par_iter()
        .map(|&(f, m, day)| {
            let ctx = Unit {
                study,
                fold: f,
                setup: &setups[f],
                fold_of: &fold_of,
                cfg,
                specs: &specs,
            };
            match day {
                Some(d) => ctx.run_day(m, d),
                None => ctx.run_forest(),
            }
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut notes = Vec::new();
    for r in results {
        records.extend(r.records);
        notes.extend(r.notes);
    }
    records.sort_by(|a, b| (method_rank(&a.method), &a.site, a.date).cmp(&(method_rank(&b.method), &b.site, b.date)));
    Ok(BenchmarkOutcome {
        folds: folds.clone(),
        records,
        notes,
        idw_phi: setups.iter().filter_map(|s| s.idw_phi).collect(),
    })
}

/// Plan with `k` folds over the study's sites, then the benchmark.
pub fn run_benchmark_k(study: &Study, k: usize, cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let ids: Vec<_> = study.monitors().sites().iter().map(|s| s.id.clone()).collect();
    let plan = make_site_folds(&ids, k, derive_seed(cfg.seed, "folds", 0))?;
    run_benchmark(study, &plan, cfg)
}

struct MethodSpecs {
    by_kind: Vec<(MeanKind, MeanSpec)>,
    forest_covariates: Vec<usize>,
}

impl MethodSpecs {
    fn new(study: &Study, covariates: &[String], methods: &[Method]) -> Result<Self> {
        let grid = study.grid();
        let mut kinds: Vec<MeanKind> = methods
            .iter()
            .filter_map(|m| match m {
                Method::Ols(k) | Method::Uk(k) => Some(*k),
                _ => None,
            })
            .collect();
        kinds.sort();
        kinds.dedup();
        let by_kind = kinds
            .into_iter()
            .map(|k| MeanSpec::new(k, covariates, grid).map(|s| (k, s)))
            .collect::<Result<_>>()?;
        let forest_covariates = if methods.contains(&Method::Forest) && grid.n_covariates() > 0 {
            MeanSpec::new(MeanKind::CovsOnly, covariates, grid)?.covariate_indices().to_vec()
        } else {
            Vec::new()
        };
        Ok(Self {
            by_kind,
            forest_covariates,
        })
    }

    fn spec(&self, kind: MeanKind) -> &MeanSpec {
        &self.by_kind.iter().find(|(k, _)| *k == kind).expect("spec resolved for every selected kind").1
    }
}

fn fold_setup(study: &Study, fold_of: &[usize], f: usize, cfg: &BenchmarkConfig, specs: &MethodSpecs) -> Result<FoldSetup> {
    let train: Vec<bool> = fold_of.iter().map(|&g| g != f).collect();
    let idw_phi = if cfg.methods.contains(&Method::Idw) {
        Some(match cfg.idw_phi {
            Some(p) => p,
            None => tune_idw_inner(study, &train, f, cfg)?,
        })
    } else {
        None
    };
    let keep = |s: usize| train[s];
    let uk_init = specs
        .by_kind
        .iter()
        .filter(|(k, _)| cfg.methods.contains(&Method::Uk(*k)))
        .map(|(k, spec)| (*k, uk_initial_params(study, spec, cfg.uk.transform, &keep).map_err(|e| e.to_string())))
        .collect();
    Ok(FoldSetup { train, idw_phi, uk_init })
}

/// Inner site-level CV over the fold's training sites.
fn tune_idw_inner(study: &Study, train: &[bool], f: usize, cfg: &BenchmarkConfig) -> Result<f64> {
    let inner = study.monitors().restrict(|s| train[s]);
    let ids: Vec<_> = inner.sites().iter().map(|s| s.id.clone()).collect();
    let k = ids.len().min(5);
    if k < 2 {
        return Ok(cfg.idw_phi_grid.first().copied().unwrap_or(DEFAULT_PHI_GRID[2]));
    }
    let plan = make_site_folds(&ids, k, derive_seed(cfg.seed, "idw-inner-folds", f as u64))?;
    Ok(idw_tune_phi(&inner, &cfg.idw_phi_grid, cfg.idw_cutoff_km, &plan)?.best_phi)
}

struct Unit<'a> {
    study: &'a Study,
    fold: usize,
    setup: &'a FoldSetup,
    fold_of: &'a [usize],
    cfg: &'a BenchmarkConfig,
    specs: &'a MethodSpecs,
}

impl Unit<'_> {
    fn note(&self, m: Method, day: Option<usize>, skipped: usize, fallback: bool, reason: String) -> RunNote {
        RunNote {
            method: m.name().to_string(),
            fold: self.fold,
            date: day.map(|d| self.study.calendar().date(d)),
            skipped,
            fallback,
            reason,
        }
    }

    fn record(&self, m: Method, site: usize, day: usize, observed: f64, p: &Prediction) -> PredictionRecord {
        PredictionRecord::new(
            m.name(),
            self.study.monitors().sites()[site].id.clone(),
            self.study.calendar().date(day),
            Some(self.fold),
            observed,
            p,
        )
    }

    fn run_day(&self, m: Method, day: usize) -> Result<UnitResult> {
        let study = self.study;
        let held: Vec<(usize, f64)> = study
            .monitors()
            .day(day)
            .iter()
            .copied()
            .filter(|&(s, _)| self.fold_of[s] == self.fold)
            .collect();
        let mut out = UnitResult {
            records: Vec::new(),
            notes: Vec::new(),
        };
        if held.is_empty() {
            return Ok(out);
        }
        let train = study.day_observations(day, |s| self.setup.train[s]);
        let targets: Vec<PointData> = held.iter().map(|&(s, _)| study.site_point(s, day)).collect();
        let preds: std::result::Result<Vec<Prediction>, String> = match m {
            Method::Ols(k) => ols_fit_day(day, &train, self.specs.spec(k))
                .and_then(|fit| ols_predict(&fit, &targets))
                .map_err(|e| e.to_string()),
            Method::Idw => return Ok(self.run_idw(day, &train, &held)),
            Method::Uk(k) => return self.run_uk(k, day, &train, &held, &targets),
            Method::Downscaler => self.run_downscaler(day, &train, &targets),
            Method::Forest => unreachable!("forest is not a daily method"),
        };
        match preds {
            Ok(ps) => {
                out.records = held
                    .iter()
                    .zip(&ps)
                    .map(|(&(s, y), p)| self.record(m, s, day, y, p))
                    .collect();
            }
            Err(reason) => out.notes.push(self.note(m, Some(day), held.len(), false, reason)),
        }
        Ok(out)
    }

    fn run_idw(&self, day: usize, train: &[Observation], held: &[(usize, f64)]) -> UnitResult {
        let cfg = IdwConfig::new(self.setup.idw_phi.expect("IDW exponent set up"), self.cfg.idw_cutoff_km)
            .expect("validated exponent");
        let pts: Vec<(LonLat, f64)> = train.iter().map(|o| (o.point.loc, o.value)).collect();
        let mut out = UnitResult {
            records: Vec::new(),
            notes: Vec::new(),
        };
        let mut skipped = 0;
        for &(s, y) in held {
            match idw_predict(&pts, self.study.monitors().sites()[s].loc, &cfg) {
                Ok(v) => out.records.push(self.record(Method::Idw, s, day, y, &Prediction::point(v))),
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            out.notes
                .push(self.note(Method::Idw, Some(day), skipped, false, "no training site in range".into()));
        }
        out
    }

    fn run_uk(
        &self,
        k: MeanKind,
        day: usize,
        train: &[Observation],
        held: &[(usize, f64)],
        targets: &[PointData],
    ) -> Result<UnitResult> {
        let m = Method::Uk(k);
        let spec = self.specs.spec(k);
        let mut out = UnitResult {
            records: Vec::new(),
            notes: Vec::new(),
        };
        let init = match &self.setup.uk_init.iter().find(|(kk, _)| *kk == k).expect("init per UK kind").1 {
            Ok(p) => *p,
            Err(reason) => {
                out.notes
                    .push(self.note(m, Some(day), held.len(), false, format!("no initial covariance: {reason}")));
                return Ok(out);
            }
        };
        let fit = if self.cfg.uk_shared_cov {
            uk_fit_fixed(day, train, spec, init, self.cfg.uk.transform)
        } else {
            uk_fit_ml(day, train, spec, init, &self.cfg.uk)
        };
        let model = match fit {
            Ok(model) => {
                if model.kind == FitKind::Fallback {
                    out.notes.push(self.note(m, Some(day), 0, true, "too few observations for ML".into()));
                }
                model
            }
            Err(e) => match uk_fit_fixed(day, train, spec, init, self.cfg.uk.transform) {
                Ok(model) => {
                    out.notes
                        .push(self.note(m, Some(day), 0, true, format!("ML failed ({e}); fixed covariance used")));
                    model
                }
                Err(e2) => {
                    out.notes.push(self.note(m, Some(day), held.len(), false, e2.to_string()));
                    return Ok(out);
                }
            },
        };
        match uk_predict(&model, targets) {
            Ok(ps) => {
                out.records = held
                    .iter()
                    .zip(&ps)
                    .map(|(&(s, y), p)| self.record(m, s, day, y, p))
                    .collect();
            }
            Err(e) => out.notes.push(self.note(m, Some(day), held.len(), false, e.to_string())),
        }
        Ok(out)
    }

    fn run_downscaler(&self, day: usize, train: &[Observation], targets: &[PointData]) -> std::result::Result<Vec<Prediction>, String> {
        if train.len() < MIN_OBSERVATIONS {
            return Err(format!("{} training observations, need {MIN_OBSERVATIONS}", train.len()));
        }
        let unit = (self.fold * self.study.n_days() + day) as u64;
        let mcmc = McmcConfig {
            seed: derive_seed(self.cfg.seed, "downscaler-fit", unit),
            ..self.cfg.mcmc.clone()
        };
        let post = downscaler_fit(day, train, &self.cfg.priors, &mcmc).map_err(|e| e.to_string())?;
        downscaler_predict(
            &post,
            targets,
            self.cfg.downscaler_draws,
            derive_seed(self.cfg.seed, "downscaler-predict", unit),
        )
        .map_err(|e| e.to_string())
    }

    fn run_forest(&self) -> Result<UnitResult> {
        let study = self.study;
        let covs = &self.specs.forest_covariates;
        let mut rows = Vec::new();
        let mut held = Vec::new();
        for (s, day, y) in study.monitors().observations() {
            if self.setup.train[s] {
                rows.push(TrainingRow {
                    site: study.monitors().sites()[s].id.clone(),
                    day,
                    features: feature_row(&study.site_point(s, day), covs),
                    response: y,
                });
            } else if self.fold_of[s] == self.fold {
                held.push((s, day, y));
            }
        }
        let mut out = UnitResult {
            records: Vec::new(),
            notes: Vec::new(),
        };
        if held.is_empty() {
            return Ok(out);
        }
        let cfg = ForestConfig {
            seed: derive_seed(self.cfg.seed, "forest", self.fold as u64),
            ..self.cfg.forest.clone()
        };
        if rows.len() < 2 * cfg.min_leaf {
            out.notes.push(self.note(
                Method::Forest,
                None,
                held.len(),
                false,
                format!("{} training rows, need {}", rows.len(), 2 * cfg.min_leaf),
            ));
            return Ok(out);
        }
        let forest = rf_train(&rows, &cfg)?;
        out.records = (&held)
            .into_par_iter()
            .map(|&(s, day, y)| {
                let p = rf_predict(&forest, &feature_row(&study.site_point(s, day), covs));
                self.record(Method::Forest, s, day, y, &p)
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::compute_metrics;
    use crate::ingest::{generate_synthetic, SyntheticConfig};

    fn tiny(n_sites: usize, n_days: usize, seed: u64) -> Study {
        let cfg = SyntheticConfig {
            n_sites,
            n_days,
            n_rows: 20,
            n_cols: 30,
            cell_km: 20.0,
            n_covariates: 2,
            seed,
            ..Default::default()
        };
        let (m, g, _) = generate_synthetic(&cfg).unwrap();
        Study::new(m, g).unwrap()
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("svr".parse::<Method>().is_err());
        assert_eq!(method_rank("svr"), 9);
    }

    #[test]
    fn idw_matches_manual_composition() {
        let study = tiny(5, 3, 3);
        let ids: Vec<_> = study.monitors().sites().iter().map(|s| s.id.clone()).collect();
        let plan = make_site_folds(&ids, 2, 8).unwrap();
        let cfg = BenchmarkConfig {
            methods: vec![Method::Idw],
            idw_phi: Some(2.0),
            ..Default::default()
        };
        let out = run_benchmark(&study, &plan, &cfg).unwrap();
        let idw = IdwConfig::new(2.0, None).unwrap();
        let mut manual = Vec::new();
        for (s, d, y) in study.monitors().observations() {
            let f = plan.fold_of(&ids[s]).unwrap();
            let train: Vec<(LonLat, f64)> = study
                .monitors()
                .day(d)
                .iter()
                .filter(|&&(t, _)| plan.fold_of(&ids[t]).unwrap() != f)
                .map(|&(t, v)| (study.monitors().sites()[t].loc, v))
                .collect();
            if let Ok(v) = idw_predict(&train, study.monitors().sites()[s].loc, &idw) {
                manual.push(PredictionRecord::new("idw", ids[s].clone(), study.calendar().date(d), Some(f), y, &Prediction::point(v)));
            }
        }
        manual.sort_by(|a, b| (&a.site, a.date).cmp(&(&b.site, b.date)));
        assert_eq!(out.records, manual);
        let m = compute_metrics(&out.records).unwrap();
        assert!(m.coverage.is_none());
    }

    #[test]
    fn every_method_runs_and_is_deterministic() {
        let study = tiny(30, 3, 5);
        let cfg = BenchmarkConfig {
            mcmc: McmcConfig {
                n_iter: 300,
                n_burn: 100,
                ..Default::default()
            },
            downscaler_draws: 50,
            forest: ForestConfig {
                n_trees: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run_benchmark_k(&study, 5, &cfg).unwrap();
        let b = run_benchmark_k(&study, 5, &cfg).unwrap();
        assert_eq!(a, b);
        let n_obs = study.monitors().n_observations();
        for m in Method::ALL {
            let got = a.records.iter().filter(|r| r.method == m.name()).count();
            let skipped: usize = a.notes.iter().filter(|n| n.method == m.name()).map(|n| n.skipped).sum();
            assert_eq!(got + skipped, n_obs, "{m}");
        }
        assert_eq!(a.idw_phi.len(), 5);
    }

    #[test]
    fn too_few_training_sites_are_noted_not_dropped() {
        let study = tiny(6, 2, 7);
        let cfg = BenchmarkConfig {
            methods: vec![Method::Ols(MeanKind::CmaqPlusCovs), Method::Downscaler],
            ..Default::default()
        };
        let out = run_benchmark_k(&study, 3, &cfg).unwrap();
        assert!(out.records.is_empty());
        let skipped: usize = out.notes.iter().map(|n| n.skipped).sum();
        assert_eq!(skipped, 2 * study.monitors().n_observations());
    }
}
