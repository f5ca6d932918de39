//! Scoring predictions produced outside this crate.

use std::collections::{BTreeMap, HashSet};

use super::folds::FoldPlan;
use super::io::ExternalRow;
use super::metrics::PredictionRecord;
use crate::dataset::MonitorDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScore {
    pub records: Vec<PredictionRecord>,
    /// Per method, held-out site-days with an observation but no prediction.
    pub shortfall: BTreeMap<String, usize>,
}

/// Joins external predictions to the observations and checks them against
/// the fold plan. A row whose site is absent from the plan, or whose
/// `fold` column names a fold in which the site was a training site, is
/// leakage.
pub fn score_external(rows: &[ExternalRow], data: &MonitorDataset, folds: &FoldPlan) -> Result<ExternalScore> {
    let cal = data.calendar();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let at = format!("line {} ({} {} {})", row.line, row.method, row.site, row.date);
        let site = data
            .site_index(&row.site)
            .ok_or_else(|| Error::DataIntegrity(format!("{at}: unknown site")))?;
        let observed = cal
            .day_of(row.date)
            .and_then(|d| data.value(site, d))
            .ok_or_else(|| Error::DataIntegrity(format!("{at}: no observation for this site-day")))?;
        let fold = folds
            .fold_of(&row.site)
            .ok_or_else(|| Error::Leakage(format!("{at}: site is not held out in any fold")))?;
        if let Some(f) = row.fold {
            if f != fold {
                return Err(Error::Leakage(format!(
                    "{at}: predicted in fold {f}, where the site is a training site (held out in fold {fold})"
                )));
            }
        }
        if !seen.insert((row.method.as_str(), site, row.date)) {
            return Err(Error::DataIntegrity(format!("{at}: duplicate prediction")));
        }
        let r = PredictionRecord {
            method: row.method.clone(),
            site: row.site.clone(),
            date: row.date,
            fold: Some(fold),
            observed,
            predicted: row.predicted,
            variance: row.variance,
            lower95: row.lower95,
            upper95: row.upper95,
        };
        r.validate()?;
        records.push(r);
    }
    let expected = data
        .observations()
        .filter(|&(s, _, _)| folds.fold_of(&data.sites()[s].id).is_some())
        .count();
    let mut per_method: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *per_method.entry(r.method.clone()).or_default() += 1;
    }
    let shortfall = per_method.into_iter().map(|(m, n)| (m, expected - n)).collect();
    Ok(ExternalScore { records, shortfall })
}
