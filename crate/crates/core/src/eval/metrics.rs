//! Prediction records and accuracy metrics.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::geo::SiteId;
use crate::prediction::Prediction;

/// One held-out prediction joined to its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub method: String,
    pub site: SiteId,
    pub date: NaiveDate,
    pub fold: Option<usize>,
    pub observed: f64,
    pub predicted: f64,
    pub variance: Option<f64>,
    pub lower95: Option<f64>,
    pub upper95: Option<f64>,
}

impl PredictionRecord {
    pub fn new(method: &str, site: SiteId, date: NaiveDate, fold: Option<usize>, observed: f64, p: &Prediction) -> Self {
        Self {
            method: method.to_string(),
            site,
            date,
            fold,
            observed,
            predicted: p.mean,
            variance: p.variance,
            lower95: p.lower95,
            upper95: p.upper95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.observed.is_finite() || !self.predicted.is_finite() {
            return Err(Error::DataIntegrity(format!(
                "{} {} {}: non-finite observed or predicted value",
                self.method, self.site, self.date
            )));
        }
        match (self.lower95, self.upper95) {
            (Some(l), Some(u)) if l <= u => Ok(()),
            (None, None) => Ok(()),
            _ => Err(Error::DataIntegrity(format!(
                "{} {} {}: interval must have both ends with lower95 <= upper95",
                self.method, self.site, self.date
            ))),
        }
    }

    pub fn error(&self) -> f64 {
        self.predicted - self.observed
    }

    pub fn covered(&self) -> Option<bool> {
        Some(self.lower95? <= self.observed && self.observed <= self.upper95?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub rmse: f64,
    pub mad: f64,
    /// None when observed or predicted values have zero variance, or fewer
    /// than two records.
    pub corr: Option<f64>,
    /// Over records carrying intervals only; None when none do.
    pub coverage: Option<f64>,
}

/// How metrics combine over days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Every record weighs the same.
    #[default]
    Grand,
    /// Metrics per date, then averaged with equal weight per date.
    DayAveraged,
}

pub fn compute_metrics(records: &[PredictionRecord]) -> Result<Metrics> {
    compute_metrics_iter(records.iter())
}

pub(crate) fn compute_metrics_iter<'a>(records: impl Iterator<Item = &'a PredictionRecord> + Clone) -> Result<Metrics> {
    let n = records.clone().count();
    if n == 0 {
        return Err(Error::InsufficientData("no records to score".into()));
    }
    let nf = n as f64;
    let mse = records.clone().map(|r| r.error().powi(2)).sum::<f64>() / nf;
    let mad = records.clone().map(|r| r.error().abs()).sum::<f64>() / nf;
    let (mut covered, mut with_interval) = (0usize, 0usize);
    for c in records.clone().filter_map(PredictionRecord::covered) {
        with_interval += 1;
        covered += usize::from(c);
    }
    Ok(Metrics {
        count: n,
        rmse: mse.sqrt(),
        mad,
        corr: pearson(records.clone().map(|r| (r.observed, r.predicted))),
        coverage: (with_interval > 0).then(|| covered as f64 / with_interval as f64),
    })
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let n = pairs.clone().count();
    if n < 2 {
        return None;
    }
    let mx = pairs.clone().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.clone().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Metrics under the chosen pooling. Day averaging takes the mean of the
/// daily RMSE, MAD, defined correlations and defined coverages; `count`
/// stays the total record count.
pub fn compute_metrics_pooled(records: &[PredictionRecord], pooling: Pooling) -> Result<Metrics> {
    match pooling {
        Pooling::Grand => compute_metrics(records),
        Pooling::DayAveraged => {
            let mut by_day: BTreeMap<NaiveDate, Vec<&PredictionRecord>> = BTreeMap::new();
            for r in records {
                by_day.entry(r.date).or_default().push(r);
            }
            if by_day.is_empty() {
                return Err(Error::InsufficientData("no records to score".into()));
            }
            let daily: Vec<Metrics> = by_day
                .values()
                .map(|rs| compute_metrics_iter(rs.iter().copied()))
                .collect::<Result<_>>()?;
            let avg = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            Ok(Metrics {
                count: records.len(),
                rmse: avg(daily.iter().map(|m| m.rmse).collect()).unwrap_or(f64::NAN),
                mad: avg(daily.iter().map(|m| m.mad).collect()).unwrap_or(f64::NAN),
                corr: avg(daily.iter().filter_map(|m| m.corr).collect()),
                coverage: avg(daily.iter().filter_map(|m| m.coverage).collect()),
            })
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn rec(obs: f64, pred: f64, interval: Option<(f64, f64)>) -> PredictionRecord {
        PredictionRecord {
            method: "m".into(),
            site: SiteId::new("a").unwrap(),
            date: NaiveDate::from_ymd_opt(2011, 1, 1).unwrap(),
            fold: None,
            observed: obs,
            predicted: pred,
            variance: None,
            lower95: interval.map(|i| i.0),
            upper95: interval.map(|i| i.1),
        }
    }

    #[test]
    fn perfect_predictions() {
        let rs: Vec<_> = (0..5).map(|i| rec(i as f64, i as f64, Some((i as f64 - 1.0, i as f64 + 1.0)))).collect();
        let m = compute_metrics(&rs).unwrap();
        assert_eq!((m.rmse, m.mad, m.corr, m.coverage), (0.0, 0.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn plus_minus_one() {
        let m = compute_metrics(&[rec(3.0, 4.0, None), rec(5.0, 4.0, None)]).unwrap();
        assert_eq!((m.rmse, m.mad, m.coverage), (1.0, 1.0, None));
        assert_eq!(m.corr, None);
    }

    #[test]
    fn hand_computed_five() {
        let obs = [2.0, 4.0, 6.0, 8.0, 10.0];
        let pred = [3.0, 3.0, 7.0, 6.0, 12.0];
        let rs: Vec<_> = obs
            .iter()
            .zip(&pred)
            .enumerate()
            .map(|(i, (&o, &p))| rec(o, p, (i % 2 == 0).then_some((p - 1.5, p + 1.5))))
            .collect();
        let m = compute_metrics(&rs).unwrap();
        // errors 1,-1,1,-2,2
        assert!((m.rmse - (11.0f64 / 5.0).sqrt()).abs() < 1e-15);
        assert!((m.mad - 7.0 / 5.0).abs() < 1e-15);
        // mean obs 6, mean pred 6.2; sxy = 12.8+6.4+0-0.4+23.2 = 42
        // sxx = 40, syy = 10.24+10.24+0.64+0.04+33.64 = 54.8
        assert!((m.corr.unwrap() - 42.0 / (40.0f64 * 54.8).sqrt()).abs() < 1e-12);
        // intervals on records 0, 2, 4; |error| <= 1.5 for 0 and 2 only
        assert_eq!(m.coverage, Some(2.0 / 3.0));
    }

    #[test]
    fn empty_and_invalid() {
        assert!(compute_metrics(&[]).is_err());
        assert!(rec(1.0, f64::NAN, None).validate().is_err());
        assert!(rec(1.0, 2.0, Some((3.0, 2.0))).validate().is_err());
    }

    #[test]
    fn day_averaged_differs_from_grand() {
        let mut rs = vec![rec(0.0, 1.0, None), rec(0.0, 1.0, None), rec(0.0, 1.0, None)];
        let mut late = rec(0.0, 3.0, None);
        late.date = NaiveDate::from_ymd_opt(2011, 1, 2).unwrap();
        rs.push(late);
        let g = compute_metrics_pooled(&rs, Pooling::Grand).unwrap();
        let d = compute_metrics_pooled(&rs, Pooling::DayAveraged).unwrap();
        assert!((g.rmse - 3.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.rmse, 2.0);
        assert_eq!(d.count, 4);
    }

    fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
        prop::collection::vec((-20.0..40.0f64, -20.0..40.0f64, prop::option::of(0.0..5.0f64)), 1..60).prop_map(|v| {
            v.into_iter()
                .map(|(o, p, w)| rec(o, p, w.map(|w| (p - w, p + w))))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rmse_dominates_mad(rs in arb_records()) {
            let m = compute_metrics(&rs).unwrap();
            prop_assert!(m.rmse >= m.mad * (1.0 - 1e-12) && m.mad >= 0.0);
            if let Some(c) = m.corr { prop_assert!((-1.0..=1.0).contains(&c)); }
            if let Some(c) = m.coverage { prop_assert!((0.0..=1.0).contains(&c)); }
        }

        #[test]
        fn permutation_invariant(rs in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = rs.clone();
            shuffled.shuffle(&mut crate::seed::rng_from(seed));
            let a = compute_metrics(&rs).unwrap();
            let b = compute_metrics(&shuffled).unwrap();
            prop_assert!((a.rmse - b.rmse).abs() <= 1e-9 * a.rmse.max(1.0));
            prop_assert!((a.mad - b.mad).abs() <= 1e-9 * a.mad.max(1.0));
            prop_assert_eq!(a.coverage, b.coverage);
        }
    }
}
