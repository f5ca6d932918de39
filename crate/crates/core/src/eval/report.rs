//! Per-method, per-stratum metric tables.

use std::collections::BTreeSet;
use std::io::Write;

use super::benchmark::method_rank;
use super::metrics::{compute_metrics_iter, Metrics, Pooling, PredictionRecord};
use super::stratify::{stratify, Strategy};
use crate::dataset::MonitorDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub stratum: &'static str,
    pub method: String,
    pub count: usize,
    /// None for an empty stratum.
    pub metrics: Option<Metrics>,
    pub observed_mean: Option<f64>,
    pub observed_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Methods in table order: built-in methods first, then others by name.
pub fn ordered_methods(records: &[PredictionRecord]) -> Vec<String> {
    let names: BTreeSet<&str> = records.iter().map(|r| r.method.as_str()).collect();
    let mut v: Vec<String> = names.into_iter().map(str::to_string).collect();
    v.sort_by(|a, b| (method_rank(a), a).cmp(&(method_rank(b), b)));
    v
}

pub fn build_report(
    records: &[PredictionRecord],
    data: &MonitorDataset,
    strategies: &[Strategy],
    pooling: Pooling,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no prediction records".into()));
    }
    let methods = ordered_methods(records);
    let mut rows = Vec::new();
    for &strategy in strategies {
        for method in &methods {
            let own: Vec<PredictionRecord> = records.iter().filter(|r| &r.method == method).cloned().collect();
            for (label, group) in stratify(&own, data, strategy)? {
                let count = group.len();
                let metrics = if count == 0 {
                    None
                } else {
                    Some(match pooling {
                        Pooling::Grand => compute_metrics_iter(group.iter().copied())?,
                        Pooling::DayAveraged => {
                            let owned: Vec<PredictionRecord> = group.iter().map(|&r| r.clone()).collect();
                            super::metrics::compute_metrics_pooled(&owned, pooling)?
                        }
                    })
                };
                let obs: Vec<f64> = group.iter().map(|r| r.observed).collect();
                rows.push(ReportRow {
                    strategy,
                    stratum: label,
                    method: method.clone(),
                    count,
                    metrics,
                    observed_mean: (count > 0).then(|| crate::linalg::mean(&obs)),
                    observed_sd: (count > 1).then(|| crate::linalg::sample_variance(&obs).sqrt()),
                });
            }
        }
    }
    Ok(EvalReport { rows })
}

pub const REPORT_HEADER: [&str; 10] = [
    "strategy", "stratum", "method", "count", "rmse", "mad", "corr", "coverage", "observed_mean", "observed_sd",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl EvalReport {
    pub fn rows_for(&self, strategy: Strategy) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn get(&self, strategy: Strategy, stratum: &str, method: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.stratum == stratum && r.method == method)
    }

    /// Long form, one row per (strategy, stratum, method). Empty strata
    /// keep their row with count 0 and blank metrics.
    pub fn write_csv<W: Write>(&self, strategies: &[Strategy], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for &s in strategies {
            for r in self.rows_for(s) {
                let m = r.metrics;
                w.write_record([
                    r.strategy.name().to_string(),
                    r.stratum.to_string(),
                    r.method.clone(),
                    r.count.to_string(),
                    cell(m.map(|m| m.rmse)),
                    cell(m.map(|m| m.mad)),
                    cell(m.and_then(|m| m.corr)),
                    cell(m.and_then(|m| m.coverage)),
                    cell(r.observed_mean),
                    cell(r.observed_sd),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Wide RMSE table: one column per stratum, one row per method, and a
    /// final row with the observed "mean (sd)" of the first method's
    /// records per stratum.
    pub fn write_rmse_table<W: Write>(&self, strategy: Strategy, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let labels = strategy.labels();
        let mut header = vec!["method".to_string()];
        header.extend(labels.iter().map(|l| l.to_string()));
        w.write_record(&header)?;
        let mut methods: Vec<&str> = Vec::new();
        for r in self.rows_for(strategy) {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        for m in &methods {
            let mut row = vec![m.to_string()];
            for l in labels {
                row.push(cell(self.get(strategy, l, m).and_then(|r| r.metrics).map(|x| x.rmse)));
            }
            w.write_record(&row)?;
        }
        if let Some(first) = methods.first() {
            let mut row = vec!["observed".to_string()];
            for l in labels {
                row.push(match self.get(strategy, l, first) {
                    Some(ReportRow { observed_mean: Some(mu), observed_sd, .. }) => {
                        format!("{mu:.2} ({})", observed_sd.map_or_else(|| "NA".into(), |s| format!("{s:.2}")))
                    }
                    _ => String::new(),
                });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Calendar, Site};
    use crate::eval::compute_metrics;
    use crate::geo::{LonLat, SiteId};
    use crate::seed::rng_from;
    use chrono::NaiveDate;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::Rng;

    fn fixture(n_sites: usize, n_days: usize, seed: u64) -> (MonitorDataset, Vec<PredictionRecord>) {
        let mut rng = rng_from(seed);
        let sites: Vec<Site> = (0..n_sites)
            .map(|i| Site {
                id: SiteId::new(format!("s{i:02}")).unwrap(),
                loc: LonLat::new(-110.0 + rng.random::<f64>() * 25.0, 30.0 + rng.random::<f64>() * 10.0).unwrap(),
                urban: i % 3 == 0,
            })
            .collect();
        let cal = Calendar::new(NaiveDate::from_ymd_opt(2011, 1, 1).unwrap(), n_days).unwrap();
        let mut obs = Vec::new();
        let mut recs = Vec::new();
        for d in 0..n_days {
            for s in 0..n_sites {
                if rng.random::<f64>() < 0.8 {
                    let y = rng.random::<f64>() * 20.0;
                    obs.push((s, d, y));
                    for m in ["idw", "uk-cmaq"] {
                        let p = y + rng.random::<f64>() * 4.0 - 2.0;
                        let w = if m == "idw" { None } else { Some((p - 2.0, p + 2.0)) };
                        recs.push(PredictionRecord {
                            method: m.into(),
                            site: sites[s].id.clone(),
                            date: cal.date(d),
                            fold: None,
                            observed: y,
                            predicted: p,
                            variance: None,
                            lower95: w.map(|w| w.0),
                            upper95: w.map(|w| w.1),
                        });
                    }
                }
            }
        }
        (MonitorDataset::new(sites, cal, obs).unwrap(), recs)
    }

    #[test]
    fn overall_matches_compute_metrics_and_ordering() {
        let (data, recs) = fixture(12, 20, 1);
        let rep = build_report(&recs, &data, &Strategy::ALL, Pooling::Grand).unwrap();
        let uk: Vec<_> = recs.iter().filter(|r| r.method == "uk-cmaq").cloned().collect();
        assert_eq!(
            rep.get(Strategy::Overall, "All", "uk-cmaq").unwrap().metrics,
            Some(compute_metrics(&uk).unwrap())
        );
        assert!(rep.get(Strategy::Overall, "All", "idw").unwrap().metrics.unwrap().coverage.is_none());
        assert_eq!(ordered_methods(&recs), vec!["idw", "uk-cmaq"]);
        let mut buf = Vec::new();
        rep.write_rmse_table(Strategy::Season, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,Winter,Spring,Summer,Fall\nidw,"));
        assert!(text.contains("\nobserved,"));
    }

    #[test]
    fn empty_stratum_kept_with_zero_count() {
        let (data, recs) = fixture(6, 10, 2);
        let rep = build_report(&recs, &data, &[Strategy::Season], Pooling::Grand).unwrap();
        let summer = rep.get(Strategy::Season, "Summer", "idw").unwrap();
        assert_eq!((summer.count, summer.metrics), (0, None));
        assert!(build_report(&[], &data, &[Strategy::Overall], Pooling::Grand).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn pooled_mse_is_weighted_stratum_mse(seed in any::<u64>()) {
            let (data, recs) = fixture(15, 40, seed);
            let rep = build_report(&recs, &data, &Strategy::ALL, Pooling::Grand).unwrap();
            for m in ["idw", "uk-cmaq"] {
                let total = rep.get(Strategy::Overall, "All", m).unwrap();
                let overall = total.metrics.unwrap().rmse.powi(2);
                for s in Strategy::ALL {
                    let (mut n, mut sse) = (0usize, 0.0);
                    for r in rep.rows_for(s).filter(|r| r.method == m) {
                        n += r.count;
                        if let Some(x) = r.metrics { sse += x.rmse.powi(2) * r.count as f64; }
                    }
                    prop_assert_eq!(n, total.count);
                    prop_assert!((sse / n as f64 - overall).abs() < 1e-9);
                }
            }
        }
    }
}
