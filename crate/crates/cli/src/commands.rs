//! Subcommand implementations. Every artifact goes to the configured
//! output directory; progress goes to stderr.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use airfuse::dataset::{MonitorDataset, PointData, Study};
use airfuse::downscaler::{downscaler_fit, downscaler_predict, read_samples, write_samples, McmcConfig, MIN_OBSERVATIONS};
use airfuse::eval::{
    build_report, make_site_folds, read_external, read_foldplan, read_records, run_benchmark, score_external,
    write_foldplan, write_records, EvalReport, FoldPlan, Method, Pooling, Strategy,
};
use airfuse::forest::{feature_names, feature_row, read_forest, rf_oob_error, rf_predict, rf_train, write_forest, TrainingRow};
use airfuse::geostat::{uk_fit_fixed, uk_fit_ml, uk_initial_params, uk_predict, ExponentialCovParams, FitKind, KrigingModel, Transform};
use airfuse::idw::{idw_predict, idw_tune_phi, IdwConfig};
use airfuse::ingest::{generate_synthetic, load_grid_csv, load_grid_meta, load_monitor_csv, write_synthetic};
use airfuse::raster::AsciiGrid;
use airfuse::regression::{best_subset_select, ols_fit_day, ols_predict, MeanKind, MeanSpec, SubsetData, SUBSET_BUDGET};
use airfuse::seed::derive_seed;
use airfuse::Prediction;
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::config::{parse_pooling, RunConfig};
use crate::{Command, CvArgs, ExternalArgs, FitArgs, FitMethod, GridMethod, PredictArgs, ReportArgs, SpecArg};

pub fn dispatch(cfg: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::Synth { n_sites, n_days } => synth(cfg, n_sites, n_days),
        Command::SelectVars => select_vars(cfg),
        Command::TuneIdw => tune_idw(cfg),
        Command::Fit(a) => fit(cfg, &a),
        Command::PredictGrid(a) => predict_grid(cfg, &a),
        Command::Cv(a) => cv(cfg, &a),
        Command::ScoreExternal(a) => external(cfg, &a),
        Command::Report(a) => report(cfg, &a),
    }
}

fn create(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_monitors(cfg: &RunConfig) -> Result<MonitorDataset> {
    let p = cfg.data.monitors_path();
    load_monitor_csv(&p).with_context(|| format!("loading {}", p.display()))
}

fn load_study(cfg: &RunConfig) -> Result<Study> {
    let monitors = load_monitors(cfg)?;
    let meta = cfg.data.grid_meta_path();
    let spec = load_grid_meta(&meta).with_context(|| format!("loading {}", meta.display()))?;
    let gp = cfg.data.grid_path();
    let grid = load_grid_csv(&gp, spec).with_context(|| format!("loading {}", gp.display()))?;
    Ok(Study::new(monitors, grid)?)
}

fn kind_of(s: SpecArg) -> MeanKind {
    match s {
        SpecArg::Cmaq => MeanKind::CmaqOnly,
        SpecArg::Covs => MeanKind::CovsOnly,
        SpecArg::Both => MeanKind::CmaqPlusCovs,
    }
}

fn spec_name(s: SpecArg) -> &'static str {
    match s {
        SpecArg::Cmaq => "cmaq",
        SpecArg::Covs => "covs",
        SpecArg::Both => "both",
    }
}

fn transform_name(t: Transform) -> &'static str {
    match t {
        Transform::Identity => "identity",
        Transform::Sqrt => "sqrt",
        Transform::Log => "log",
    }
}

fn parse_transform(s: &str) -> Result<Transform> {
    match s {
        "identity" => Ok(Transform::Identity),
        "sqrt" => Ok(Transform::Sqrt),
        "log" => Ok(Transform::Log),
        _ => bail!("unknown transform `{s}`"),
    }
}

fn kind_name(k: FitKind) -> &'static str {
    match k {
        FitKind::Ml => "ml",
        FitKind::Fixed => "fixed",
        FitKind::Fallback => "fallback",
    }
}

fn forest_covariates(study: &Study, cfg: &RunConfig) -> Result<Vec<usize>> {
    if study.grid().n_covariates() == 0 {
        return Ok(Vec::new());
    }
    Ok(MeanSpec::new(MeanKind::CovsOnly, &cfg.model.covariates, study.grid())?
        .covariate_indices()
        .to_vec())
}

fn synth(cfg: &RunConfig, n_sites: Option<usize>, n_days: Option<usize>) -> Result<()> {
    let mut sc = cfg.synthetic.clone();
    sc.seed = cfg.seed;
    if let Some(n) = n_sites {
        sc.n_sites = n;
    }
    if let Some(n) = n_days {
        sc.n_days = n;
    }
    let (m, g, truth) = generate_synthetic(&sc)?;
    write_synthetic(&cfg.out, &m, &g, &truth)?;
    eprintln!(
        "wrote {} sites x {} days and a {}x{} grid to {}",
        m.n_sites(),
        m.n_days(),
        g.spec().n_rows(),
        g.spec().n_cols(),
        cfg.out.display()
    );
    Ok(())
}

fn select_vars(cfg: &RunConfig) -> Result<()> {
    let study = load_study(cfg)?;
    let data = SubsetData::from_study(&study);
    let p = data.names.len();
    if p > SUBSET_BUDGET {
        bail!("{p} candidate predictors exceed the exhaustive-search budget of {SUBSET_BUDGET}");
    }
    let max_size = if cfg.selection.max_size == 0 { p } else { cfg.selection.max_size.min(p) };
    let ids: Vec<_> = study.monitors().sites().iter().map(|s| s.id.clone()).collect();
    let plan = make_site_folds(&ids, cfg.selection.k, derive_seed(cfg.seed, "selection-folds", 0))?;
    let sel = best_subset_select(&data, max_size, &plan)?;
    let mut w = create(cfg, "selection.csv")?;
    writeln!(w, "size,cv_rmse,chosen,predictors")?;
    for (i, rmse) in sel.cv_rmse.iter().enumerate() {
        let names: Vec<&str> = sel
            .best_by_size
            .get(i)
            .map(|cols| cols.iter().map(|&c| data.names[c].as_str()).collect())
            .unwrap_or_default();
        writeln!(w, "{},{rmse},{},{}", i + 1, i + 1 == sel.size, names.join(";"))?;
    }
    w.flush()?;
    let mut w = create(cfg, "selection-coefficients.csv")?;
    writeln!(w, "term,estimate")?;
    let terms = std::iter::once("intercept").chain(sel.predictors.iter().map(String::as_str));
    for (t, b) in terms.zip(&sel.coefficients) {
        writeln!(w, "{t},{b}")?;
    }
    w.flush()?;
    eprintln!("selected {} of {p}: {}", sel.size, sel.predictors.join(", "));
    Ok(())
}

fn tune_idw(cfg: &RunConfig) -> Result<()> {
    let monitors = load_monitors(cfg)?;
    let ids: Vec<_> = monitors.sites().iter().map(|s| s.id.clone()).collect();
    let plan = make_site_folds(&ids, cfg.cv.k, derive_seed(cfg.seed, "idw-folds", 0))?;
    let t = idw_tune_phi(&monitors, &cfg.idw.phi_grid, cfg.idw.cutoff_km, &plan)?;
    let mut w = create(cfg, "idw-tuning.csv")?;
    writeln!(w, "phi,rmse,best")?;
    for (phi, rmse) in &t.rmse {
        writeln!(w, "{phi},{rmse},{}", *phi == t.best_phi)?;
    }
    w.flush()?;
    eprintln!("best phi {} ({} held-out site-days had no neighbour)", t.best_phi, t.skipped);
    Ok(())
}

fn fit(cfg: &RunConfig, a: &FitArgs) -> Result<()> {
    let study = load_study(cfg)?;
    match a.method {
        FitMethod::Ols => fit_ols(cfg, &study, a.spec),
        FitMethod::Uk => fit_uk(cfg, &study, a.spec, a.shared_cov),
        FitMethod::Downscaler => fit_downscaler(cfg, &study, a.samples),
        FitMethod::Rf => fit_forest(cfg, &study),
    }
}

fn fit_ols(cfg: &RunConfig, study: &Study, spec_arg: SpecArg) -> Result<()> {
    let spec = MeanSpec::new(kind_of(spec_arg), &cfg.model.covariates, study.grid())?;
    let fits: Vec<_> = (0..study.n_days())
        .into_par_iter()
        .map(|d| ols_fit_day(d, &study.day_observations(d, |_| true), &spec))
        .collect();
    let mut w = create(cfg, &format!("fit-ols-{}.csv", spec_name(spec_arg)))?;
    writeln!(w, "day,date,n,residual_variance,{}", spec.column_names().join(","))?;
    for (d, f) in fits.iter().enumerate() {
        match f {
            Ok(f) => {
                let coefs: Vec<String> = f.coefficients.iter().map(f64::to_string).collect();
                writeln!(w, "{d},{},{},{},{}", study.calendar().date(d), f.n, f.residual_variance, coefs.join(","))?;
            }
            Err(e) => eprintln!("day {d}: {e}"),
        }
    }
    w.flush()?;
    Ok(())
}

const UK_FIT_COLUMNS: [&str; 9] = [
    "day", "date", "n", "kind", "transform", "nugget", "partial_sill", "range_km", "loglik",
];

fn fit_uk_day(cfg: &RunConfig, study: &Study, spec: &MeanSpec, init: ExponentialCovParams, shared: bool, d: usize) -> Result<KrigingModel> {
    let obs = study.day_observations(d, |_| true);
    let opts = cfg.uk_options();
    if shared {
        return Ok(uk_fit_fixed(d, &obs, spec, init, opts.transform)?);
    }
    match uk_fit_ml(d, &obs, spec, init, &opts) {
        Ok(m) => Ok(m),
        Err(e) => {
            eprintln!("day {d}: ML failed ({e}); fixed covariance used");
            Ok(uk_fit_fixed(d, &obs, spec, init, opts.transform)?)
        }
    }
}

fn fit_uk(cfg: &RunConfig, study: &Study, spec_arg: SpecArg, shared: bool) -> Result<()> {
    let spec = MeanSpec::new(kind_of(spec_arg), &cfg.model.covariates, study.grid())?;
    let transform = cfg.model.transform;
    let init = uk_initial_params(study, &spec, transform, &|_| true).context("initial covariance")?;
    let fits: Vec<Result<KrigingModel>> = (0..study.n_days())
        .into_par_iter()
        .map(|d| fit_uk_day(cfg, study, &spec, init, shared, d))
        .collect();
    let mut w = create(cfg, &format!("fit-uk-{}.csv", spec_name(spec_arg)))?;
    writeln!(w, "{},{}", UK_FIT_COLUMNS.join(","), spec.column_names().join(","))?;
    for (d, f) in fits.iter().enumerate() {
        match f {
            Ok(m) => {
                let p = m.params;
                let coefs: Vec<String> = m.coefficients().iter().map(f64::to_string).collect();
                writeln!(
                    w,
                    "{d},{},{},{},{},{},{},{},{},{}",
                    study.calendar().date(d),
                    m.n_train(),
                    kind_name(m.kind),
                    transform_name(m.transform),
                    p.nugget(),
                    p.partial_sill(),
                    p.range_km(),
                    m.loglik,
                    coefs.join(",")
                )?;
            }
            Err(e) => eprintln!("day {d}: {e:#}"),
        }
    }
    w.flush()?;
    Ok(())
}

fn fit_downscaler(cfg: &RunConfig, study: &Study, samples: bool) -> Result<()> {
    let fits: Vec<_> = (0..study.n_days())
        .into_par_iter()
        .map(|d| {
            let obs = study.day_observations(d, |_| true);
            if obs.len() < MIN_OBSERVATIONS {
                return Err(anyhow!("{} observations, need {MIN_OBSERVATIONS}", obs.len()));
            }
            let mcmc = McmcConfig {
                seed: derive_seed(cfg.seed, "downscaler-fit", d as u64),
                ..cfg.mcmc()
            };
            Ok(downscaler_fit(d, &obs, &cfg.downscaler.priors, &mcmc)?)
        })
        .collect();
    let mut w = create(cfg, "fit-downscaler.csv")?;
    writeln!(w, "day,date,n,param,mean,sd,q025,q975,mc_se,acceptance")?;
    for (d, f) in fits.iter().enumerate() {
        match f {
            Ok(post) => {
                for s in post.summary() {
                    writeln!(
                        w,
                        "{d},{},{},{},{},{},{},{},{},{}",
                        study.calendar().date(d),
                        post.n_sites(),
                        s.name,
                        s.mean,
                        s.sd,
                        s.q025,
                        s.q975,
                        s.mc_se,
                        post.acceptance
                    )?;
                }
                if samples {
                    let mut sw = create(cfg, &samples_name(d))?;
                    write_samples(post, &mut sw)?;
                    sw.flush()?;
                }
            }
            Err(e) => eprintln!("day {d}: {e:#}"),
        }
    }
    w.flush()?;
    Ok(())
}

fn samples_name(day: usize) -> String {
    format!("downscaler-day{day:03}.fmds")
}

fn forest_rows(study: &Study, covs: &[usize]) -> Vec<TrainingRow> {
    study
        .monitors()
        .observations()
        .map(|(s, day, y)| TrainingRow {
            site: study.monitors().sites()[s].id.clone(),
            day,
            features: feature_row(&study.site_point(s, day), covs),
            response: y,
        })
        .collect()
}

fn fit_forest(cfg: &RunConfig, study: &Study) -> Result<()> {
    let covs = forest_covariates(study, cfg)?;
    let rows = forest_rows(study, &covs);
    let fc = airfuse::forest::ForestConfig {
        seed: derive_seed(cfg.seed, "forest", 0),
        ..cfg.forest()
    };
    let p = covs.len() + 4;
    let started = Instant::now();
    let forest = rf_train(&rows, &fc)?;
    eprintln!(
        "trained {} trees on {} rows, {p} features, m_try = {} in {:.1}s",
        forest.trees.len(),
        rows.len(),
        forest.m_try,
        started.elapsed().as_secs_f64()
    );
    let mut w = create(cfg, "forest.fmrf")?;
    write_forest(&forest, &mut w)?;
    w.flush()?;
    let names: Vec<String> = covs.iter().map(|&i| study.grid().covariate_names()[i].clone()).collect();
    let mut w = create(cfg, "forest-meta.csv")?;
    writeln!(w, "key,value")?;
    writeln!(w, "n_trees,{}", forest.trees.len())?;
    writeln!(w, "n_features,{}", forest.n_features)?;
    writeln!(w, "m_try,{}", forest.m_try)?;
    writeln!(w, "min_leaf,{}", fc.min_leaf)?;
    writeln!(w, "n_rows,{}", rows.len())?;
    writeln!(w, "features,{}", feature_names(&names).join(";"))?;
    w.flush()?;
    let oob = rf_oob_error(&forest, &rows)?;
    let mut w = create(cfg, "oob.csv")?;
    writeln!(w, "n_trees,rmse,excluded")?;
    for o in &oob {
        writeln!(w, "{},{},{}", o.n_trees, o.rmse, o.excluded)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_day(study: &Study, s: &str) -> Result<usize> {
    let cal = study.calendar();
    let day = match s.parse::<usize>() {
        Ok(d) => d,
        Err(_) => {
            let date = airfuse::ingest::parse_date(s).ok_or_else(|| anyhow!("`{s}` is neither a day index nor a YYYY-MM-DD date"))?;
            cal.day_of(date).ok_or_else(|| anyhow!("{date} is outside the study period"))?
        }
    };
    if day >= cal.n_days() {
        bail!("day {day} is outside the study period of {} days", cal.n_days());
    }
    Ok(day)
}

/// Stored UK parameters for `day` from a `fit-uk-*.csv` artifact.
fn read_uk_params(path: &Path, day: usize) -> Result<(ExponentialCovParams, Transform)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| anyhow!("{}: no `{name}` column", path.display()));
    let (c_day, c_t, c_n, c_s, c_r) = (col("day")?, col("transform")?, col("nugget")?, col("partial_sill")?, col("range_km")?);
    for rec in rdr.records() {
        let rec = rec?;
        if rec[c_day].parse::<usize>().ok() == Some(day) {
            let f = |c: usize| rec[c].parse::<f64>().with_context(|| format!("{}: bad value `{}`", path.display(), &rec[c]));
            let params = ExponentialCovParams::new(f(c_n)?, f(c_s)?, f(c_r)?)?;
            return Ok((params, parse_transform(&rec[c_t])?));
        }
    }
    bail!("{} has no fit for day {day}", path.display())
}

fn artifact(cfg: &RunConfig, name: &str, hint: &str) -> Result<PathBuf> {
    let p = cfg.out.join(name);
    if !p.exists() {
        bail!("{} not found; run `airfuse {hint}` first", p.display());
    }
    Ok(p)
}

fn predict_grid(cfg: &RunConfig, a: &PredictArgs) -> Result<()> {
    let study = load_study(cfg)?;
    let day = parse_day(&study, &a.day)?;
    let obs = study.day_observations(day, |_| true);
    let targets = study.grid_points(day);
    let preds: Vec<Prediction> = match a.method {
        GridMethod::Ols => {
            let spec = MeanSpec::new(kind_of(a.spec), &cfg.model.covariates, study.grid())?;
            ols_predict(&ols_fit_day(day, &obs, &spec)?, &targets)?
        }
        GridMethod::Idw => {
            let phi = match cfg.idw.phi {
                Some(p) => p,
                None => read_best_phi(&artifact(cfg, "idw-tuning.csv", "tune-idw")?)?,
            };
            let ic = IdwConfig::new(phi, cfg.idw.cutoff_km)?;
            let train: Vec<_> = obs.iter().map(|o| (o.point.loc, o.value)).collect();
            targets
                .par_iter()
                .map(|t| idw_predict(&train, t.loc, &ic).map_or(Prediction::point(f64::NAN), Prediction::point))
                .collect()
        }
        GridMethod::Uk => {
            let name = format!("fit-uk-{}.csv", spec_name(a.spec));
            let path = artifact(cfg, &name, &format!("fit --method uk --spec {}", spec_name(a.spec)))?;
            let (params, transform) = read_uk_params(&path, day)?;
            let spec = MeanSpec::new(kind_of(a.spec), &cfg.model.covariates, study.grid())?;
            let model = uk_fit_fixed(day, &obs, &spec, params, transform)?;
            predict_chunks(&targets, |chunk| Ok(uk_predict(&model, chunk)?))?
        }
        GridMethod::Downscaler => {
            let path = artifact(cfg, &samples_name(day), "fit --method downscaler --samples")?;
            let locs = obs.iter().map(|o| o.point.loc).collect();
            let post = read_samples(open(&path)?, locs)?;
            let seed = derive_seed(cfg.seed, "downscaler-predict", day as u64);
            downscaler_predict(&post, &targets, cfg.downscaler.draws, seed)?
        }
        GridMethod::Rf => {
            let forest = read_forest(open(&artifact(cfg, "forest.fmrf", "fit --method rf")?)?)?;
            let covs = forest_covariates(&study, cfg)?;
            if covs.len() + 4 != forest.n_features {
                bail!("forest.fmrf has {} features but the configured covariates give {}", forest.n_features, covs.len() + 4);
            }
            targets.par_iter().map(|t| rf_predict(&forest, &feature_row(t, &covs))).collect()
        }
    };
    let spec = *study.grid().spec();
    let stem = match a.method {
        GridMethod::Ols | GridMethod::Uk => format!("{}-{}", method_stem(a.method), spec_name(a.spec)),
        _ => method_stem(a.method).to_string(),
    };
    let stem = format!("{stem}-{}", study.calendar().date(day));
    let mean: Vec<Option<f64>> = preds.iter().map(|p| Some(p.mean)).collect();
    let mut grid = AsciiGrid::from_cells(&spec, &mean)?;
    if a.log {
        grid = grid.map(f64::ln);
    }
    let name = if a.log { format!("{stem}-log.asc") } else { format!("{stem}.asc") };
    let mut w = create(cfg, &name)?;
    grid.write(&mut w)?;
    w.flush()?;
    if preds.iter().any(|p| p.variance.is_some()) {
        let var: Vec<Option<f64>> = preds.iter().map(|p| p.variance).collect();
        let mut w = create(cfg, &format!("{stem}-var.asc"))?;
        AsciiGrid::from_cells(&spec, &var)?.write(&mut w)?;
        w.flush()?;
    }
    eprintln!("wrote {}", cfg.out.join(name).display());
    Ok(())
}

fn method_stem(m: GridMethod) -> &'static str {
    match m {
        GridMethod::Ols => "ols",
        GridMethod::Idw => "idw",
        GridMethod::Uk => "uk",
        GridMethod::Downscaler => "downscaler",
        GridMethod::Rf => "rf",
    }
}

/// Runs `f` over fixed-size chunks in parallel, keeping target order.
fn predict_chunks(targets: &[PointData], f: impl Fn(&[PointData]) -> Result<Vec<Prediction>> + Sync) -> Result<Vec<Prediction>> {
    let parts: Vec<Vec<Prediction>> = targets.par_chunks(256).map(&f).collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn read_best_phi(path: &Path) -> Result<f64> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(2) == Some("true") {
            return Ok(rec[0].parse()?);
        }
    }
    bail!("{} marks no best exponent", path.display())
}

fn strategies(cfg: &RunConfig) -> Result<Vec<Strategy>> {
    cfg.cv.strategies.iter().map(|s| Ok(s.parse::<Strategy>()?)).collect()
}

fn pooling(cfg: &RunConfig, day_averaged: bool) -> Result<Pooling> {
    if day_averaged {
        Ok(Pooling::DayAveraged)
    } else {
        parse_pooling(&cfg.cv.pooling)
    }
}

fn write_report(cfg: &RunConfig, rep: &EvalReport, strategies: &[Strategy], name: &str) -> Result<()> {
    let mut w = create(cfg, name)?;
    rep.write_csv(strategies, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cv(cfg: &RunConfig, a: &CvArgs) -> Result<()> {
    let study = load_study(cfg)?;
    let methods: Vec<Method> = match &a.methods {
        Some(m) => m.clone(),
        None => cfg.cv.methods.iter().map(|s| Ok(s.parse::<Method>()?)).collect::<Result<_>>()?,
    };
    let strategies = strategies(cfg)?;
    let pooling = pooling(cfg, a.day_averaged)?;
    let plan = match &a.foldplan {
        Some(p) => read_foldplan(open(p)?, &p.display().to_string())?,
        None => {
            let ids: Vec<_> = study.monitors().sites().iter().map(|s| s.id.clone()).collect();
            make_site_folds(&ids, a.k.unwrap_or(cfg.cv.k), derive_seed(cfg.seed, "folds", 0))?
        }
    };
    let started = Instant::now();
    let outcome = run_benchmark(&study, &plan, &cfg.benchmark(&methods))?;
    eprintln!(
        "{} records from {} methods in {:.1}s",
        outcome.records.len(),
        methods.len(),
        started.elapsed().as_secs_f64()
    );
    let mut w = create(cfg, "records.csv")?;
    write_records(&outcome.records, &mut w)?;
    w.flush()?;
    let mut w = create(cfg, "foldplan.csv")?;
    write_foldplan(&plan, &mut w)?;
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(cfg, "notes.csv")?);
    w.write_record(["method", "fold", "date", "skipped", "fallback", "reason"])?;
    for n in &outcome.notes {
        let date = n.date.map_or_else(String::new, |d| d.to_string());
        w.write_record([&n.method, &n.fold.to_string(), &date, &n.skipped.to_string(), &n.fallback.to_string(), &n.reason])?;
    }
    w.flush()?;
    if !outcome.idw_phi.is_empty() {
        let mut w = create(cfg, "idw-phi.csv")?;
        writeln!(w, "fold,phi")?;
        for (f, phi) in outcome.idw_phi.iter().enumerate() {
            writeln!(w, "{f},{phi}")?;
        }
        w.flush()?;
    }
    if outcome.records.is_empty() {
        bail!("cross-validation produced no records; see notes.csv");
    }
    let rep = build_report(&outcome.records, study.monitors(), &strategies, pooling)?;
    write_report(cfg, &rep, &strategies, "report.csv")?;
    for r in rep.rows_for(Strategy::Overall) {
        if let Some(m) = r.metrics {
            let cov = m.coverage.map_or_else(|| "-".into(), |c| format!("{c:.3}"));
            eprintln!("{:<11} rmse {:.3}  coverage {cov}", r.method, m.rmse);
        }
    }
    Ok(())
}

fn external(cfg: &RunConfig, a: &ExternalArgs) -> Result<()> {
    let monitors = load_monitors(cfg)?;
    let rows = read_external(open(&a.predictions)?, &a.predictions.display().to_string())?;
    let plan: FoldPlan = read_foldplan(open(&a.foldplan)?, &a.foldplan.display().to_string())?;
    let scored = score_external(&rows, &monitors, &plan)?;
    let mut w = create(cfg, "external-records.csv")?;
    write_records(&scored.records, &mut w)?;
    w.flush()?;
    let mut w = create(cfg, "external-shortfall.csv")?;
    writeln!(w, "method,missing")?;
    for (m, n) in &scored.shortfall {
        writeln!(w, "{m},{n}")?;
        if *n > 0 {
            eprintln!("{m}: {n} held-out site-days without a prediction");
        }
    }
    w.flush()?;
    let strategies = strategies(cfg)?;
    let rep = build_report(&scored.records, &monitors, &strategies, pooling(cfg, a.day_averaged)?)?;
    write_report(cfg, &rep, &strategies, "external-report.csv")
}

fn report(cfg: &RunConfig, a: &ReportArgs) -> Result<()> {
    let monitors = load_monitors(cfg)?;
    let records = read_records(open(&a.records)?, &a.records.display().to_string())?;
    if records.is_empty() {
        bail!("{} holds no prediction records", a.records.display());
    }
    let rep = build_report(&records, &monitors, &a.strategies, pooling(cfg, a.day_averaged)?)?;
    for &s in &a.strategies {
        write_report(cfg, &rep, &[s], &format!("report-{}.csv", s.name()))?;
        let mut w = create(cfg, &format!("rmse-{}.csv", s.name()))?;
        rep.write_rmse_table(s, &mut w)?;
        w.flush()?;
    }
    Ok(())
}
