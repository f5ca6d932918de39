//! Readers and writers for `monitors.csv`, `grid.csv` and `grid-meta.csv`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::dataset::{Calendar, GridDataset, MonitorDataset, Site};
use crate::error::{Error, Result};
use crate::geo::{GridSpec, LonLat, SiteId};

pub const MONITOR_HEADER: [&str; 6] = ["site_id", "lon", "lat", "urban", "date", "pm25"];
pub const GRID_META_HEADER: [&str; 5] = ["n_rows", "n_cols", "cell_km", "origin_lon", "origin_lat"];
const GRID_FIXED_HEADER: [&str; 4] = ["row", "col", "date", "cmaq"];

pub(crate) fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

pub(crate) fn parse_f64(field: &str, name: &str, path: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{name}: cannot parse `{field}` as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{name}: non-finite value `{field}`")));
    }
    Ok(v)
}

pub(crate) fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader)
}

pub(crate) fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str], path: &str) -> Result<Vec<String>> {
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(
            path,
            1,
            format!("header {:?} does not start with {:?}", header, expected),
        ));
    }
    Ok(header)
}

pub fn load_monitor_csv(path: impl AsRef<Path>) -> Result<MonitorDataset> {
    let path = path.as_ref();
    read_monitor_csv(File::open(path)?, &path.display().to_string())
}

/// Parses the monitor schema. `label` names the source in error messages.
pub fn read_monitor_csv<R: Read>(reader: R, label: &str) -> Result<MonitorDataset> {
    let mut rdr = csv_reader(reader);
    let header = check_header(&mut rdr, &MONITOR_HEADER, label)?;
    if header.len() != MONITOR_HEADER.len() {
        return Err(parse_err(label, 1, format!("unexpected extra columns {:?}", &header[6..])));
    }

    let mut sites: Vec<Site> = Vec::new();
    let mut index: HashMap<SiteId, usize> = HashMap::new();
    let mut rows: Vec<(usize, NaiveDate, Option<f64>, usize)> = Vec::new();
    let mut keys: HashMap<(usize, NaiveDate), usize> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 6 {
            return Err(parse_err(label, line, format!("expected 6 fields, found {}", rec.len())));
        }
        let id = SiteId::new(&rec[0]).map_err(|_| parse_err(label, line, "empty site_id"))?;
        let lon = parse_f64(&rec[1], "lon", label, line)?;
        let lat = parse_f64(&rec[2], "lat", label, line)?;
        let loc = LonLat::new(lon, lat).map_err(|e| parse_err(label, line, e.to_string()))?;
        let urban = parse_bool(&rec[3]).ok_or_else(|| parse_err(label, line, format!("urban: `{}` is not 0/1", &rec[3])))?;
        let date = parse_date(&rec[4]).ok_or_else(|| parse_err(label, line, format!("date: `{}` is not YYYY-MM-DD", &rec[4])))?;
        let value = if rec[5].trim().is_empty() {
            None
        } else {
            let v = parse_f64(&rec[5], "pm25", label, line)?;
            if v < 0.0 {
                return Err(parse_err(label, line, format!("pm25: negative concentration {v}")));
            }
            Some(v)
        };

        let site = match index.get(&id) {
            Some(&i) => {
                let s = &sites[i];
                if s.loc != loc || s.urban != urban {
                    return Err(parse_err(
                        label,
                        line,
                        format!("site `{id}` metadata differs from its first occurrence"),
                    ));
                }
                i
            }
            None => {
                index.insert(id.clone(), sites.len());
                sites.push(Site { id, loc, urban });
                sites.len() - 1
            }
        };
        if let Some(first) = keys.insert((site, date), line) {
            return Err(Error::DuplicateKey {
                path: label.to_string(),
                line,
                site: format!("{} (first seen on line {first})", sites[site].id),
                date: date.to_string(),
            });
        }
        rows.push((site, date, value, line));
    }

    let first = rows.iter().map(|r| r.1).min().ok_or_else(|| parse_err(label, 1, "no data rows"))?;
    let last = rows.iter().map(|r| r.1).max().expect("non-empty");
    let calendar = Calendar::new(first, (last - first).num_days() as usize + 1)?;
    let obs = rows
        .into_iter()
        .filter_map(|(s, d, v, _)| v.map(|v| (s, calendar.day_of(d).expect("within range"), v)));
    MonitorDataset::new(sites, calendar, obs)
}

pub fn write_monitor_csv(data: &MonitorDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_monitor_csv_to(data, f)
}

/// Rows are grouped by site in dataset order so a reload preserves site order.
/// Sites without observations, and calendar end-points without data, are
/// written as rows with an empty `pm25`.
pub fn write_monitor_csv_to<W: Write>(data: &MonitorDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MONITOR_HEADER)?;
    let cal = data.calendar();
    let mut per_site: Vec<Vec<(usize, f64)>> = vec![Vec::new(); data.n_sites()];
    for (s, d, v) in data.observations() {
        per_site[s].push((d, v));
    }
    let last_day = cal.n_days() - 1;
    for (s, site) in data.sites().iter().enumerate() {
        let mut days: Vec<(usize, Option<f64>)> = per_site[s].iter().map(|&(d, v)| (d, Some(v))).collect();
        if s == 0 {
            for edge in [0, last_day] {
                if !days.iter().any(|&(d, _)| d == edge) {
                    days.push((edge, None));
                }
            }
        } else if days.is_empty() {
            days.push((0, None));
        }
        days.sort_by_key(|&(d, _)| d);
        days.dedup_by_key(|x| x.0);
        for (d, v) in days {
            w.write_record([
                site.id.as_str().to_string(),
                site.loc.lon().to_string(),
                site.loc.lat().to_string(),
                if site.urban { "1".into() } else { "0".into() },
                cal.date(d).to_string(),
                v.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_grid_meta(path: impl AsRef<Path>) -> Result<GridSpec> {
    let path = path.as_ref();
    read_grid_meta(File::open(path)?, &path.display().to_string())
}

pub fn read_grid_meta<R: Read>(reader: R, label: &str) -> Result<GridSpec> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &GRID_META_HEADER, label)?;
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| parse_err(label, 2, "missing grid metadata row"))??;
    let line = rec.position().map_or(2, |p| p.line() as usize);
    let count = |i: usize, name: &str| -> Result<usize> {
        rec[i].trim().parse().map_err(|_| parse_err(label, line, format!("{name}: `{}` is not a count", &rec[i])))
    };
    let n_rows = count(0, "n_rows")?;
    let n_cols = count(1, "n_cols")?;
    let cell_km = parse_f64(&rec[2], "cell_km", label, line)?;
    let lon = parse_f64(&rec[3], "origin_lon", label, line)?;
    let lat = parse_f64(&rec[4], "origin_lat", label, line)?;
    let origin = LonLat::new(lon, lat).map_err(|e| parse_err(label, line, e.to_string()))?;
    GridSpec::new(n_rows, n_cols, cell_km, origin).map_err(|e| parse_err(label, line, e.to_string()))
}

pub fn write_grid_meta(spec: &GridSpec, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GRID_META_HEADER)?;
    w.write_record([
        spec.n_rows().to_string(),
        spec.n_cols().to_string(),
        spec.cell_km().to_string(),
        spec.origin().lon().to_string(),
        spec.origin().lat().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn load_grid_csv(path: impl AsRef<Path>, spec: GridSpec) -> Result<GridDataset> {
    let path = path.as_ref();
    read_grid_csv(File::open(path)?, spec, &path.display().to_string())
}

/// Parses the grid schema. The file must hold every (row, col, date) of
/// its date range exactly once.
pub fn read_grid_csv<R: Read>(reader: R, spec: GridSpec, label: &str) -> Result<GridDataset> {
    let mut rdr = csv_reader(reader);
    let header = check_header(&mut rdr, &GRID_FIXED_HEADER, label)?;
    let names: Vec<String> = header[4..].to_vec();
    let p = names.len();

    struct Row {
        cell: usize,
        date: NaiveDate,
        values: Vec<f64>,
    }
    let mut rows = Vec::new();
    let mut dates = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |pos| pos.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(label, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let row: usize = rec[0].parse().map_err(|_| parse_err(label, line, "row: not an index"))?;
        let col: usize = rec[1].parse().map_err(|_| parse_err(label, line, "col: not an index"))?;
        if row >= spec.n_rows() || col >= spec.n_cols() {
            return Err(parse_err(label, line, format!("cell ({row}, {col}) outside {}x{} grid", spec.n_rows(), spec.n_cols())));
        }
        let date = parse_date(&rec[2]).ok_or_else(|| parse_err(label, line, format!("date: `{}` is not YYYY-MM-DD", &rec[2])))?;
        let mut values = Vec::with_capacity(p + 1);
        for (i, name) in header.iter().enumerate().skip(3) {
            if rec[i].is_empty() {
                return Err(parse_err(label, line, format!("{name}: missing value (grid files must be complete)")));
            }
            values.push(parse_f64(&rec[i], name, label, line)?);
        }
        dates.insert(date);
        rows.push((line, Row { cell: spec.cell_index(row, col), date, values }));
    }
    let first = *dates.first().ok_or_else(|| parse_err(label, 1, "no data rows"))?;
    let last = *dates.last().expect("non-empty");
    let calendar = Calendar::new(first, (last - first).num_days() as usize + 1)?;
    let n_cells = spec.n_cells();
    let total = n_cells * calendar.n_days();

    let mut filled = vec![false; total];
    let mut cmaq = vec![0.0; total];
    let mut covs = vec![0.0; total * p];
    for (line, r) in rows {
        let slot = calendar.day_of(r.date).expect("in range") * n_cells + r.cell;
        if filled[slot] {
            let (row, col) = spec.cell_row_col(r.cell);
            return Err(parse_err(label, line, format!("duplicate entry for cell ({row}, {col}) on {}", r.date)));
        }
        filled[slot] = true;
        cmaq[slot] = r.values[0];
        covs[slot * p..(slot + 1) * p].copy_from_slice(&r.values[1..]);
    }
    let missing: Vec<String> = filled
        .iter()
        .enumerate()
        .filter(|(_, &f)| !f)
        .take(5)
        .map(|(slot, _)| {
            let (row, col) = spec.cell_row_col(slot % n_cells);
            format!("({row}, {col}, {})", calendar.date(slot / n_cells))
        })
        .collect();
    if !missing.is_empty() {
        let n_missing = filled.iter().filter(|f| !**f).count();
        return Err(Error::DataIntegrity(format!(
            "{label}: {n_missing} (row, col, date) entries missing, e.g. {}",
            missing.join(", ")
        )));
    }
    GridDataset::new(spec, calendar, names, cmaq, covs)
}

pub fn write_grid_csv(grid: &GridDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_grid_csv_to(grid, f)
}

pub fn write_grid_csv_to<W: Write>(grid: &GridDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = GRID_FIXED_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(grid.covariate_names().iter().cloned());
    w.write_record(&header)?;
    let spec = grid.spec();
    let cal = grid.calendar();
    for day in 0..cal.n_days() {
        let date = cal.date(day).to_string();
        for cell in 0..spec.n_cells() {
            let (r, c) = spec.cell_row_col(cell);
            let mut rec = vec![r.to_string(), c.to_string(), date.clone(), grid.model_output(day, cell).to_string()];
            rec.extend(grid.covariates(day, cell).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_file() {
        let text = "site_id,lon,lat,urban,date,pm25\nA,-90,35,1,2011-01-01,7.5\nB,-91,36,0,2011-01-02,3\n";
        let ds = read_monitor_csv(text.as_bytes(), "m.csv").unwrap();
        assert_eq!(ds.n_observations(), 2);
        assert_eq!(ds.n_sites(), 2);
        assert_eq!(ds.n_days(), 2);
        assert_eq!(ds.value(1, 1), Some(3.0));
        assert!(ds.sites()[0].urban);
    }

    #[test]
    fn negative_concentration_names_line() {
        let text = "site_id,lon,lat,urban,date,pm25\nA,-90,35,1,2011-01-01,7.5\nA,-90,35,1,2011-01-02,-1\n";
        match read_monitor_csv(text.as_bytes(), "m.csv") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("negative"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "site_id,lon,lat,urban,date,pm25\nA,-90,35,1,2011-01-01,7.5\nA,-90,35,1,2011-01-01,\n";
        assert!(matches!(
            read_monitor_csv(text.as_bytes(), "m.csv"),
            Err(Error::DuplicateKey { line: 3, .. })
        ));
    }

    #[test]
    fn missing_values_are_absent() {
        let text = "site_id,lon,lat,urban,date,pm25\nA,-90,35,0,2011-01-01,\nA,-90,35,0,2011-01-04,2\n";
        let ds = read_monitor_csv(text.as_bytes(), "m.csv").unwrap();
        assert_eq!(ds.n_days(), 4);
        assert_eq!(ds.n_observations(), 1);
        assert_eq!(ds.value(0, 0), None);
    }

    #[test]
    fn bad_header_rejected() {
        let text = "site,lon,lat,urban,date,pm25\n";
        assert!(matches!(read_monitor_csv(text.as_bytes(), "m.csv"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn incomplete_grid_rejected() {
        let spec = GridSpec::new(1, 2, 12.0, LonLat::new(-90.0, 35.0).unwrap()).unwrap();
        let text = "row,col,date,cmaq,temp\n0,0,2011-01-01,5,1\n";
        assert!(matches!(read_grid_csv(text.as_bytes(), spec, "g.csv"), Err(Error::DataIntegrity(_))));
        let text = "row,col,date,cmaq,temp\n0,0,2011-01-01,5,1\n0,1,2011-01-01,6,2\n";
        let g = read_grid_csv(text.as_bytes(), spec, "g.csv").unwrap();
        assert_eq!(g.model_output(0, 1), 6.0);
        assert_eq!(g.covariates(0, 1), &[2.0]);
    }
}
