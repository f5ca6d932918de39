//! Monitor observations, gridded model output, and the joined study view.

use std::collections::HashMap;

use chrono::{Datelike, Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GridSpec, LonLat, SiteId, KM_PER_MILE};

/// Contiguous run of days. Day indices are zero-based internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    start: NaiveDate,
    n_days: usize,
}

impl Calendar {
    pub fn new(start: NaiveDate, n_days: usize) -> Result<Self> {
        if n_days == 0 {
            return Err(Error::Config("calendar needs at least one day".into()));
        }
        Ok(Self { start, n_days })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.n_days).then_some(offset as usize)
    }

    pub fn day_of_year(&self, day: usize) -> u32 {
        self.date(day).ordinal()
    }

    pub fn month(&self, day: usize) -> u32 {
        self.date(day).month()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: SiteId,
    pub loc: LonLat,
    pub urban: bool,
}

/// Per-site, per-day monitor measurements (µg/m³). Missing site-days are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorDataset {
    sites: Vec<Site>,
    calendar: Calendar,
    // per day: (site index, value) sorted by site index
    by_day: Vec<Vec<(usize, f64)>>,
}

impl MonitorDataset {
    /// `observations` are (site index, day, value) triples.
    pub fn new(
        sites: Vec<Site>,
        calendar: Calendar,
        observations: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, s) in sites.iter().enumerate() {
            if let Some(prev) = seen.insert(s.id.clone(), i) {
                return Err(Error::DataIntegrity(format!(
                    "site id `{}` appears at positions {prev} and {i}",
                    s.id
                )));
            }
        }
        let mut by_day = vec![Vec::new(); calendar.n_days()];
        for (site, day, value) in observations {
            if site >= sites.len() {
                return Err(Error::DataIntegrity(format!("observation refers to unknown site index {site}")));
            }
            if day >= calendar.n_days() {
                return Err(Error::DataIntegrity(format!("observation day {day} outside calendar")));
            }
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::DataIntegrity(format!(
                    "concentration {value} at site `{}` on {} is negative or non-finite",
                    sites[site].id,
                    calendar.date(day)
                )));
            }
            by_day[day].push((site, value));
        }
        for (day, obs) in by_day.iter_mut().enumerate() {
            obs.sort_by_key(|&(s, _)| s);
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DataIntegrity(format!(
                    "duplicate observation for site `{}` on {}",
                    sites[w[0].0].id,
                    calendar.date(day)
                )));
            }
        }
        Ok(Self {
            sites,
            calendar,
            by_day,
        })
    }

    /// The sites accepted by `keep`, with their observations. Site order is
    /// preserved.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> MonitorDataset {
        let kept: Vec<usize> = (0..self.sites.len()).filter(|&s| keep(s)).collect();
        let mut new_index = vec![usize::MAX; self.sites.len()];
        for (i, &s) in kept.iter().enumerate() {
            new_index[s] = i;
        }
        let by_day = self
            .by_day
            .iter()
            .map(|obs| {
                obs.iter()
                    .filter(|&&(s, _)| new_index[s] != usize::MAX)
                    .map(|&(s, v)| (new_index[s], v))
                    .collect()
            })
            .collect();
        MonitorDataset {
            sites: kept.iter().map(|&s| self.sites[s].clone()).collect(),
            calendar: self.calendar,
            by_day,
        }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn calendar(&self) -> Calendar {
        self.calendar
    }

    pub fn n_days(&self) -> usize {
        self.calendar.n_days()
    }

    pub fn site_index(&self, id: &SiteId) -> Option<usize> {
        self.sites.iter().position(|s| &s.id == id)
    }

    /// Observations on `day` as (site index, value), sorted by site.
    pub fn day(&self, day: usize) -> &[(usize, f64)] {
        &self.by_day[day]
    }

    pub fn value(&self, site: usize, day: usize) -> Option<f64> {
        let obs = &self.by_day[day];
        obs.binary_search_by_key(&site, |&(s, _)| s).ok().map(|i| obs[i].1)
    }

    pub fn n_observations(&self) -> usize {
        self.by_day.iter().map(Vec::len).sum()
    }

    /// All observations as (site, day, value), ordered by day then site.
    pub fn observations(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.by_day
            .iter()
            .enumerate()
            .flat_map(|(d, obs)| obs.iter().map(move |&(s, v)| (s, d, v)))
    }

    /// Count of active sites strictly within `radius_miles` of `target` on
    /// `day`, and the distance in miles to the nearest one (infinite when
    /// none is active). `exclude` drops one site, typically the target itself.
    pub fn active_neighbors(
        &self,
        target: LonLat,
        day: usize,
        radius_miles: f64,
        exclude: Option<usize>,
    ) -> NearbyStats {
        let mut count = 0;
        let mut nearest = f64::INFINITY;
        for &(s, _) in &self.by_day[day] {
            if Some(s) == exclude {
                continue;
            }
            let miles = haversine_distance(target, self.sites[s].loc) / KM_PER_MILE;
            if miles < radius_miles {
                count += 1;
            }
            nearest = nearest.min(miles);
        }
        NearbyStats {
            count_within: count,
            nearest_miles: nearest,
        }
    }

    /// Active-site count within 50 miles and distance to the nearest active site.
    pub fn nearest_active_stats(&self, target: LonLat, day: usize, exclude: Option<usize>) -> NearbyStats {
        self.active_neighbors(target, day, NEARBY_RADIUS_MILES, exclude)
    }
}

pub const NEARBY_RADIUS_MILES: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearbyStats {
    pub count_within: usize,
    pub nearest_miles: f64,
}

/// Gridded model output and covariates, per cell per day.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    spec: GridSpec,
    calendar: Calendar,
    covariate_names: Vec<String>,
    // [day][cell]
    model_output: Vec<f64>,
    // [day][cell][covariate]
    covariates: Vec<f64>,
}

impl GridDataset {
    pub fn new(
        spec: GridSpec,
        calendar: Calendar,
        covariate_names: Vec<String>,
        model_output: Vec<f64>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let cells = spec.n_cells() * calendar.n_days();
        if model_output.len() != cells {
            return Err(Error::DataIntegrity(format!(
                "model output has {} values, expected {cells}",
                model_output.len()
            )));
        }
        if covariates.len() != cells * covariate_names.len() {
            return Err(Error::DataIntegrity(format!(
                "covariates have {} values, expected {}",
                covariates.len(),
                cells * covariate_names.len()
            )));
        }
        let mut names: Vec<&String> = covariate_names.iter().collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DataIntegrity(format!("duplicate covariate name `{}`", w[0])));
        }
        Ok(Self {
            spec,
            calendar,
            covariate_names,
            model_output,
            covariates,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn calendar(&self) -> Calendar {
        self.calendar
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn model_output(&self, day: usize, cell: usize) -> f64 {
        self.model_output[day * self.spec.n_cells() + cell]
    }

    pub fn covariates(&self, day: usize, cell: usize) -> &[f64] {
        let p = self.covariate_names.len();
        let start = (day * self.spec.n_cells() + cell) * p;
        &self.covariates[start..start + p]
    }
}

/// Location-level inputs every method may draw on.
#[derive(Debug, Clone, PartialEq)]
pub struct PointData {
    pub loc: LonLat,
    pub cmaq: f64,
    pub covariates: Vec<f64>,
    pub day_of_year: u32,
}

/// A same-day training observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub site: usize,
    pub point: PointData,
    pub value: f64,
}

/// Monitors joined to the grid cells that contain them.
#[derive(Debug, Clone)]
pub struct Study {
    monitors: MonitorDataset,
    grid: GridDataset,
    site_cells: Vec<usize>,
    grid_day_offset: usize,
}

impl Study {
    pub fn new(monitors: MonitorDataset, grid: GridDataset) -> Result<Self> {
        let mc = monitors.calendar();
        let gc = grid.calendar();
        let offset = gc.day_of(mc.start()).ok_or_else(|| {
            Error::DataIntegrity(format!("grid calendar does not contain monitor start date {}", mc.start()))
        })?;
        if offset + mc.n_days() > gc.n_days() {
            return Err(Error::DataIntegrity(format!(
                "grid covers {} .. {}, monitors extend to {}",
                gc.start(),
                gc.date(gc.n_days() - 1),
                mc.date(mc.n_days() - 1)
            )));
        }
        let site_cells = monitors
            .sites()
            .iter()
            .map(|s| {
                grid.spec()
                    .link_to_cell(s.loc)
                    .map(|(r, c)| grid.spec().cell_index(r, c))
                    .map_err(|_| Error::DataIntegrity(format!("site `{}` at {} lies outside the grid", s.id, s.loc)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            monitors,
            grid,
            site_cells,
            grid_day_offset: offset,
        })
    }

    pub fn monitors(&self) -> &MonitorDataset {
        &self.monitors
    }

    pub fn grid(&self) -> &GridDataset {
        &self.grid
    }

    pub fn n_days(&self) -> usize {
        self.monitors.n_days()
    }

    pub fn calendar(&self) -> Calendar {
        self.monitors.calendar()
    }

    pub fn site_cell(&self, site: usize) -> usize {
        self.site_cells[site]
    }

    pub fn grid_day(&self, day: usize) -> usize {
        day + self.grid_day_offset
    }

    pub fn cell_point(&self, day: usize, cell: usize, loc: LonLat) -> PointData {
        let gd = self.grid_day(day);
        PointData {
            loc,
            cmaq: self.grid.model_output(gd, cell),
            covariates: self.grid.covariates(gd, cell).to_vec(),
            day_of_year: self.calendar().day_of_year(day),
        }
    }

    pub fn site_point(&self, site: usize, day: usize) -> PointData {
        self.cell_point(day, self.site_cells[site], self.monitors.sites()[site].loc)
    }

    /// Observations on `day` at sites accepted by `keep`.
    pub fn day_observations(&self, day: usize, keep: impl Fn(usize) -> bool) -> Vec<Observation> {
        self.monitors
            .day(day)
            .iter()
            .filter(|&&(s, _)| keep(s))
            .map(|&(s, v)| Observation {
                site: s,
                point: self.site_point(s, day),
                value: v,
            })
            .collect()
    }

    /// Grid cell centroids for `day` as prediction points.
    pub fn grid_points(&self, day: usize) -> Vec<PointData> {
        let spec = *self.grid.spec();
        (0..spec.n_cells())
            .map(|cell| {
                let (r, c) = spec.cell_row_col(cell);
                self.cell_point(day, cell, spec.cell_centroid(r, c))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ll(lon: f64, lat: f64) -> LonLat {
        LonLat::new(lon, lat).unwrap()
    }

    fn site(id: &str, loc: LonLat) -> Site {
        Site {
            id: SiteId::new(id).unwrap(),
            loc,
            urban: false,
        }
    }

    fn cal(n: usize) -> Calendar {
        Calendar::new(NaiveDate::from_ymd_opt(2011, 1, 1).unwrap(), n).unwrap()
    }

    /// Point `miles` due north of `origin`.
    fn north_of(origin: LonLat, miles: f64) -> LonLat {
        let km = miles * KM_PER_MILE;
        ll(origin.lon(), origin.lat() + (km / crate::geo::EARTH_RADIUS_KM).to_degrees())
    }

    #[test]
    fn nearest_active_examples() {
        let target = ll(-90.0, 35.0);
        let sites = vec![site("a", north_of(target, 10.0))];
        let ds = MonitorDataset::new(sites, cal(2), vec![(0, 0, 5.0)]).unwrap();
        let stats = ds.nearest_active_stats(target, 0, None);
        assert_eq!(stats.count_within, 1);
        assert!((stats.nearest_miles - 10.0).abs() < 1e-9);

        let none = ds.nearest_active_stats(target, 1, None);
        assert_eq!(none.count_within, 0);
        assert!(none.nearest_miles.is_infinite());

        let sites = vec![
            site("a", north_of(target, 30.0)),
            site("b", north_of(target, 49.9)),
            site("c", north_of(target, 50.1)),
        ];
        let ds = MonitorDataset::new(sites, cal(1), vec![(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)]).unwrap();
        let stats = ds.nearest_active_stats(target, 0, None);
        assert_eq!(stats.count_within, 2);
        assert!((stats.nearest_miles - 30.0).abs() < 1e-9);
    }

    #[test]
    fn neighbor_count_monotone_in_radius() {
        let target = ll(-90.0, 35.0);
        let sites: Vec<Site> = (0..20)
            .map(|i| site(&format!("s{i}"), north_of(target, 7.0 * i as f64 + 1.0)))
            .collect();
        let obs: Vec<_> = (0..20).map(|i| (i, 0, 1.0)).collect();
        let ds = MonitorDataset::new(sites, cal(1), obs).unwrap();
        let mut last = 0;
        for r in 0..200 {
            let c = ds.active_neighbors(target, 0, r as f64, None).count_within;
            assert!(c >= last);
            last = c;
        }
        assert_eq!(last, 20);
    }

    #[test]
    fn rejects_bad_observations() {
        let sites = vec![site("a", ll(0.0, 0.0))];
        assert!(MonitorDataset::new(sites.clone(), cal(1), vec![(0, 0, -1.0)]).is_err());
        assert!(MonitorDataset::new(sites.clone(), cal(1), vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(MonitorDataset::new(sites.clone(), cal(1), vec![(1, 0, 1.0)]).is_err());
        let dup = vec![site("a", ll(0.0, 0.0)), site("a", ll(1.0, 0.0))];
        assert!(MonitorDataset::new(dup, cal(1), vec![]).is_err());
    }
}
