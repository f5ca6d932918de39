//! CSV forms of prediction records and fold plans.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::folds::FoldPlan;
use super::metrics::PredictionRecord;
use crate::error::Result;
use crate::geo::SiteId;
use crate::ingest::{check_header, csv_reader, parse_date, parse_err, parse_f64};

pub const RECORD_HEADER: [&str; 9] = [
    "method", "site_id", "date", "fold", "observed", "predicted", "variance", "lower95", "upper95",
];
pub const FOLDPLAN_HEADER: [&str; 2] = ["site_id", "fold"];
pub const EXTERNAL_HEADER: [&str; 7] = ["method", "site_id", "date", "predicted", "variance", "lower95", "upper95"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn opt_f64(field: &str, name: &str, path: &str, line: usize) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name, path, line).map(Some)
    }
}

fn opt_usize(field: &str, name: &str, path: &str, line: usize) -> Result<Option<usize>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse()
        .map(Some)
        .map_err(|_| parse_err(path, line, format!("{name}: cannot parse `{field}` as a fold index")))
}

pub fn write_records<W: Write>(records: &[PredictionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.site.to_string(),
            r.date.to_string(),
            r.fold.map_or_else(String::new, |f| f.to_string()),
            r.observed.to_string(),
            r.predicted.to_string(),
            opt(r.variance),
            opt(r.lower95),
            opt(r.upper95),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R, label: &str) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &RECORD_HEADER, label)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| rec.get(k).unwrap_or("");
        let site = SiteId::new(f(1)).map_err(|_| parse_err(label, line, "empty site_id"))?;
        let date = parse_date(f(2)).ok_or_else(|| parse_err(label, line, format!("bad date `{}`", f(2))))?;
        let r = PredictionRecord {
            method: f(0).to_string(),
            site,
            date,
            fold: opt_usize(f(3), "fold", label, line)?,
            observed: parse_f64(f(4), "observed", label, line)?,
            predicted: parse_f64(f(5), "predicted", label, line)?,
            variance: opt_f64(f(6), "variance", label, line)?,
            lower95: opt_f64(f(7), "lower95", label, line)?,
            upper95: opt_f64(f(8), "upper95", label, line)?,
        };
        r.validate().map_err(|e| parse_err(label, line, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

/// Predictions in the external-model layout (no observed column).
pub fn write_external<W: Write>(records: &[PredictionRecord], with_fold: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = EXTERNAL_HEADER.to_vec();
    if with_fold {
        header.push("fold");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.method.clone(),
            r.site.to_string(),
            r.date.to_string(),
            r.predicted.to_string(),
            opt(r.variance),
            opt(r.lower95),
            opt(r.upper95),
        ];
        if with_fold {
            row.push(r.fold.map_or_else(String::new, |f| f.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// An external prediction row with its 1-based CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRow {
    pub line: usize,
    pub method: String,
    pub site: SiteId,
    pub date: chrono::NaiveDate,
    pub fold: Option<usize>,
    pub predicted: f64,
    pub variance: Option<f64>,
    pub lower95: Option<f64>,
    pub upper95: Option<f64>,
}

pub fn read_external<R: Read>(reader: R, label: &str) -> Result<Vec<ExternalRow>> {
    let mut rdr = csv_reader(reader);
    let header = check_header(&mut rdr, &EXTERNAL_HEADER, label)?;
    let extra: HashMap<&str, usize> = header.iter().enumerate().skip(EXTERNAL_HEADER.len()).map(|(i, h)| (h.as_str(), i)).collect();
    if let Some(h) = extra.keys().find(|&&h| h != "fold") {
        return Err(parse_err(label, 1, format!("unexpected column `{h}`")));
    }
    let fold_col = extra.get("fold").copied();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| rec.get(k).unwrap_or("");
        if f(0).trim().is_empty() {
            return Err(parse_err(label, line, "empty method"));
        }
        let row = ExternalRow {
            line,
            method: f(0).to_string(),
            site: SiteId::new(f(1)).map_err(|_| parse_err(label, line, "empty site_id"))?,
            date: parse_date(f(2)).ok_or_else(|| parse_err(label, line, format!("bad date `{}`", f(2))))?,
            fold: match fold_col {
                Some(c) => opt_usize(f(c), "fold", label, line)?,
                None => None,
            },
            predicted: parse_f64(f(3), "predicted", label, line)?,
            variance: opt_f64(f(4), "variance", label, line)?,
            lower95: opt_f64(f(5), "lower95", label, line)?,
            upper95: opt_f64(f(6), "upper95", label, line)?,
        };
        match (row.lower95, row.upper95) {
            (Some(l), Some(u)) if l <= u => {}
            (None, None) => {}
            _ => return Err(parse_err(label, line, "interval must have both ends with lower95 <= upper95")),
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_foldplan<W: Write>(plan: &FoldPlan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FOLDPLAN_HEADER)?;
    for (site, fold) in plan.assignments() {
        w.write_record([site.to_string(), fold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `foldplan.csv`. The shuffle seed is not stored and reads back as 0.
pub fn read_foldplan<R: Read>(reader: R, label: &str) -> Result<FoldPlan> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &FOLDPLAN_HEADER, label)?;
    let mut pairs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let site = SiteId::new(rec.get(0).unwrap_or("")).map_err(|_| parse_err(label, line, "empty site_id"))?;
        let fold = opt_usize(rec.get(1).unwrap_or(""), "fold", label, line)?
            .ok_or_else(|| parse_err(label, line, "missing fold"))?;
        pairs.push((site, fold));
    }
    FoldPlan::from_assignments(pairs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::make_site_folds;
    use crate::eval::metrics::tests::rec;

    #[test]
    fn records_roundtrip_bitwise() {
        let mut a = rec(12.3456789012345, 1.0 / 3.0, Some((-0.1, 2.0f64.sqrt())));
        a.variance = Some(std::f64::consts::PI);
        a.fold = Some(3);
        let b = rec(0.0, 1e-300, None);
        let mut buf = Vec::new();
        write_records(&[a.clone(), b.clone()], &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice(), "mem").unwrap(), vec![a, b]);
    }

    #[test]
    fn foldplan_roundtrip() {
        let ids: Vec<SiteId> = (0..11).map(|i| SiteId::new(format!("s{i}")).unwrap()).collect();
        let plan = make_site_folds(&ids, 5, 4).unwrap();
        let mut buf = Vec::new();
        write_foldplan(&plan, &mut buf).unwrap();
        let back = read_foldplan(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.assignments().collect::<Vec<_>>(), plan.assignments().collect::<Vec<_>>());
    }

    #[test]
    fn external_parsing() {
        let text = "method,site_id,date,predicted,variance,lower95,upper95,fold\nsvr,a,2011-01-01,3.5,,,,1\n";
        let rows = read_external(text.as_bytes(), "ext").unwrap();
        assert_eq!(rows[0].fold, Some(1));
        assert_eq!(rows[0].line, 2);
        assert!(read_external("method,site_id,date,predicted,variance,lower95,upper95,extra\n".as_bytes(), "ext").is_err());
        let bad = "method,site_id,date,predicted,variance,lower95,upper95\nsvr,a,2011-01-01,3.5,,1,\n";
        assert!(read_external(bad.as_bytes(), "ext").is_err());
    }
}
