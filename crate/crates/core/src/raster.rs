//! ESRI ASCII grids of per-cell values.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::geo::GridSpec;

pub const NODATA: f64 = -9999.0;

/// Values in file order: rows north to south, columns west to east.
/// Corner coordinates are the grid's km map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub n_cols: usize,
    pub n_rows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub values: Vec<Option<f64>>,
}

impl AsciiGrid {
    /// `cell_values` indexed by grid cell (row 0 southernmost).
    pub fn from_cells(spec: &GridSpec, cell_values: &[Option<f64>]) -> Result<Self> {
        if cell_values.len() != spec.n_cells() {
            return Err(Error::DataIntegrity(format!(
                "{} values for a grid of {} cells",
                cell_values.len(),
                spec.n_cells()
            )));
        }
        let (xll, yll) = spec.map_coords(spec.origin());
        let mut values = Vec::with_capacity(spec.n_cells());
        for r in (0..spec.n_rows()).rev() {
            for c in 0..spec.n_cols() {
                values.push(cell_values[spec.cell_index(r, c)].filter(|v| v.is_finite()));
            }
        }
        Ok(Self {
            n_cols: spec.n_cols(),
            n_rows: spec.n_rows(),
            xll,
            yll,
            cellsize: spec.cell_km(),
            values,
        })
    }

    /// Value of grid cell (row, col), row 0 southernmost.
    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.values[(self.n_rows - 1 - row) * self.n_cols + col]
    }

    /// Elementwise map of present values; NODATA stays NODATA, as does any
    /// value mapped to a non-finite number.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.map(&f).filter(|x| x.is_finite())).collect(),
            ..self.clone()
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ncols {}", self.n_cols)?;
        writeln!(out, "nrows {}", self.n_rows)?;
        writeln!(out, "xllcorner {}", self.xll)?;
        writeln!(out, "yllcorner {}", self.yll)?;
        writeln!(out, "cellsize {}", self.cellsize)?;
        writeln!(out, "NODATA_value {NODATA}")?;
        for row in self.values.chunks(self.n_cols) {
            let line: Vec<String> = row.iter().map(|v| v.unwrap_or(NODATA).to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R, label: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: label.to_string(),
            line,
            message: msg,
        };
        let mut lines = BufReader::new(input).lines().enumerate();
        let mut header = |key: &str| -> Result<f64> {
            let (i, line) = lines.next().ok_or_else(|| err(0, format!("missing `{key}`")))?;
            let line = line?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(k), Some(v)) if k.eq_ignore_ascii_case(key) => {
                    v.parse().map_err(|_| err(i + 1, format!("bad `{key}` value `{v}`")))
                }
                _ => Err(err(i + 1, format!("expected `{key}`"))),
            }
        };
        let n_cols = header("ncols")?;
        let n_rows = header("nrows")?;
        let xll = header("xllcorner")?;
        let yll = header("yllcorner")?;
        let cellsize = header("cellsize")?;
        let nodata = header("NODATA_value")?;
        if n_cols < 1.0 || n_rows < 1.0 || n_cols.fract() != 0.0 || n_rows.fract() != 0.0 {
            return Err(err(1, "ncols and nrows must be positive integers".into()));
        }
        let (n_cols, n_rows) = (n_cols as usize, n_rows as usize);
        let mut values = Vec::with_capacity(n_cols * n_rows);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<Option<f64>> = line
                .split_whitespace()
                .map(|t| {
                    let v: f64 = t.parse().map_err(|_| err(i + 1, format!("bad value `{t}`")))?;
                    Ok((v != nodata).then_some(v))
                })
                .collect::<Result<_>>()?;
            if row.len() != n_cols {
                return Err(err(i + 1, format!("{} values, expected {n_cols}", row.len())));
            }
            values.extend(row);
        }
        if values.len() != n_cols * n_rows {
            return Err(err(0, format!("{} rows, expected {n_rows}", values.len() / n_cols)));
        }
        Ok(Self {
            n_cols,
            n_rows,
            xll,
            yll,
            cellsize,
            values,
        })
    }
}
