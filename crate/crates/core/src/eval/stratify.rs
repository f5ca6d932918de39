//! Stratification of prediction records.

use std::fmt;
use std::str::FromStr;

use chrono::Datelike;

use super::metrics::PredictionRecord;
use crate::dataset::{MonitorDataset, NEARBY_RADIUS_MILES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Overall,
    /// Other sites with a same-day observation within 50 miles.
    Nearby,
    Urban,
    /// Observed concentration, closed-left bins at 6 and 12.
    Level,
    /// Distance to the closest other site active that day.
    Distance,
    /// West of longitude -100 or not.
    Longitude,
    Season,
}

pub const LOW_MED: f64 = 6.0;
pub const MED_HIGH: f64 = 12.0;
pub const EAST_WEST_LON: f64 = -100.0;

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Overall,
        Strategy::Nearby,
        Strategy::Urban,
        Strategy::Level,
        Strategy::Distance,
        Strategy::Longitude,
        Strategy::Season,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Overall => "overall",
            Strategy::Nearby => "nearby",
            Strategy::Urban => "urban",
            Strategy::Level => "level",
            Strategy::Distance => "distance",
            Strategy::Longitude => "longitude",
            Strategy::Season => "season",
        }
    }

    /// Stratum labels in reporting order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Strategy::Overall => &["All"],
            Strategy::Nearby => &["<5", "5-9", "10-19", ">=20"],
            Strategy::Urban => &["Urban", "Non-Urban"],
            Strategy::Level => &["Low", "Medium", "High"],
            Strategy::Distance => &["<50mi", ">=50mi"],
            Strategy::Longitude => &["West", "East"],
            Strategy::Season => &["Winter", "Spring", "Summer", "Fall"],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                let known: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown strategy `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

pub fn level_label(observed: f64) -> usize {
    if observed < LOW_MED {
        0
    } else if observed < MED_HIGH {
        1
    } else {
        2
    }
}

pub fn longitude_label(lon: f64) -> usize {
    usize::from(lon >= EAST_WEST_LON)
}

pub fn season_label(month: u32) -> usize {
    match month {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

pub fn nearby_label(count: usize) -> usize {
    match count {
        0..=4 => 0,
        5..=9 => 1,
        10..=19 => 2,
        _ => 3,
    }
}

/// Index into `strategy.labels()` for one record.
pub fn stratum_of(record: &PredictionRecord, data: &MonitorDataset, strategy: Strategy) -> Result<usize> {
    let unjoinable = |why: &str| {
        Error::DataIntegrity(format!(
            "record {} {} {} cannot be joined to the monitor data: {why}",
            record.method, record.site, record.date
        ))
    };
    let site = data.site_index(&record.site).ok_or_else(|| unjoinable("unknown site"))?;
    let day = data.calendar().day_of(record.date).ok_or_else(|| unjoinable("date outside the study period"))?;
    let loc = data.sites()[site].loc;
    Ok(match strategy {
        Strategy::Overall => 0,
        Strategy::Nearby => nearby_label(data.active_neighbors(loc, day, NEARBY_RADIUS_MILES, Some(site)).count_within),
        Strategy::Urban => usize::from(!data.sites()[site].urban),
        Strategy::Level => level_label(record.observed),
        Strategy::Distance => {
            let nearest = data.active_neighbors(loc, day, NEARBY_RADIUS_MILES, Some(site)).nearest_miles;
            usize::from(nearest >= NEARBY_RADIUS_MILES)
        }
        Strategy::Longitude => longitude_label(loc.lon()),
        Strategy::Season => season_label(record.date.month()),
    })
}

/// Records grouped by stratum, one group per label (possibly empty), in
/// label order.
pub fn stratify<'a>(
    records: &'a [PredictionRecord],
    data: &MonitorDataset,
    strategy: Strategy,
) -> Result<Vec<(&'static str, Vec<&'a PredictionRecord>)>> {
    let labels = strategy.labels();
    let mut groups: Vec<Vec<&PredictionRecord>> = vec![Vec::new(); labels.len()];
    for r in records {
        groups[stratum_of(r, data, strategy)?].push(r);
    }
    Ok(labels.iter().copied().zip(groups).collect())
}
