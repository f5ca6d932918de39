//! Coordinates, great-circle distances and the rectangular model grid.
//!
//! Distances are kilometres on a sphere of radius 6371 km. Miles only
//! appear in stratification thresholds.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const KM_PER_MILE: f64 = 1.609_344;

/// Relative slack used when deciding that a point sits exactly on a cell edge.
const EDGE_SNAP: f64 = 1e-9;

/// A validated longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LonLat {
    lon: f64,
    lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let ok = lon.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lon)
            && (-90.0..=90.0).contains(&lat);
        if ok {
            Ok(Self { lon, lat })
        } else {
            Err(Error::InvalidCoordinate { lon, lat })
        }
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }
}

impl fmt::Display for LonLat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lon, self.lat)
    }
}

/// Opaque monitor identifier. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId(String);

impl SiteId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::DataIntegrity("empty site id".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Great-circle distance in km (haversine, R = 6371 km).
pub fn haversine_distance(a: LonLat, b: LonLat) -> f64 {
    if a == b {
        return 0.0;
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

pub fn km_to_miles(km: f64) -> f64 {
    km / KM_PER_MILE
}

/// Symmetric matrix of great-circle distances between a set of locations.
#[derive(Debug, Clone)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn between(locs: &[LonLat]) -> Self {
        let n = locs.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine_distance(locs[i], locs[j]);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        Self(m)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Distances from each of `from` (rows) to each of `to` (columns).
pub fn cross_distances(from: &[LonLat], to: &[LonLat]) -> DMatrix<f64> {
    DMatrix::from_fn(from.len(), to.len(), |i, j| haversine_distance(from[i], to[j]))
}

/// Rectangular grid of square cells laid out on an equirectangular
/// projection whose standard parallel is the origin latitude.
///
/// `origin` is the south-west corner of cell (0, 0). Rows increase
/// northward, columns eastward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n_rows: usize,
    n_cols: usize,
    cell_km: f64,
    origin: LonLat,
}

impl GridSpec {
    pub fn new(n_rows: usize, n_cols: usize, cell_km: f64, origin: LonLat) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Config("grid must have at least one row and column".into()));
        }
        if !(cell_km.is_finite() && cell_km > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_km}")));
        }
        if origin.lat().abs() >= 89.0 {
            return Err(Error::Config("grid origin too close to a pole".into()));
        }
        let spec = Self {
            n_rows,
            n_cols,
            cell_km,
            origin,
        };
        // The far corner must still be a valid coordinate.
        spec.unproject(n_cols as f64 * cell_km, n_rows as f64 * cell_km)?;
        Ok(spec)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_km(&self) -> f64 {
        self.cell_km
    }

    pub fn origin(&self) -> LonLat {
        self.origin
    }

    pub fn width_km(&self) -> f64 {
        self.n_cols as f64 * self.cell_km
    }

    pub fn height_km(&self) -> f64 {
        self.n_rows as f64 * self.cell_km
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn cell_row_col(&self, index: usize) -> (usize, usize) {
        (index / self.n_cols, index % self.n_cols)
    }

    fn x_scale(&self) -> f64 {
        EARTH_RADIUS_KM * self.origin.lat().to_radians().cos()
    }

    /// Map coordinates in km: equirectangular with a false origin at (0, 0) degrees.
    pub fn map_coords(&self, loc: LonLat) -> (f64, f64) {
        (
            self.x_scale() * loc.lon().to_radians(),
            EARTH_RADIUS_KM * loc.lat().to_radians(),
        )
    }

    /// Offset of `loc` from the grid origin, in km.
    pub fn project(&self, loc: LonLat) -> (f64, f64) {
        let (x, y) = self.map_coords(loc);
        let (x0, y0) = self.map_coords(self.origin);
        (x - x0, y - y0)
    }

    pub fn unproject(&self, x_km: f64, y_km: f64) -> Result<LonLat> {
        let lon = self.origin.lon() + (x_km / self.x_scale()).to_degrees();
        let lat = self.origin.lat() + (y_km / EARTH_RADIUS_KM).to_degrees();
        LonLat::new(lon, lat)
    }

    pub fn cell_centroid(&self, row: usize, col: usize) -> LonLat {
        self.unproject((col as f64 + 0.5) * self.cell_km, (row as f64 + 0.5) * self.cell_km)
            .expect("centroid of a validated grid is a valid coordinate")
    }

    pub fn centroids(&self) -> Vec<LonLat> {
        (0..self.n_cells())
            .map(|i| {
                let (r, c) = self.cell_row_col(i);
                self.cell_centroid(r, c)
            })
            .collect()
    }

    /// Cell containing `loc`. Points on a shared edge go to the cell with
    /// the smaller (row, col) index.
    pub fn link_to_cell(&self, loc: LonLat) -> Result<(usize, usize)> {
        let (x, y) = self.project(loc);
        let col = axis_index(x / self.cell_km, self.n_cols);
        let row = axis_index(y / self.cell_km, self.n_rows);
        match (row, col) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(Error::OutOfDomain {
                lon: loc.lon(),
                lat: loc.lat(),
            }),
        }
    }
}

fn axis_index(units: f64, n: usize) -> Option<usize> {
    let nearest = units.round();
    let v = if (units - nearest).abs() < EDGE_SNAP * nearest.abs().max(1.0) {
        nearest
    } else {
        units
    };
    if !(0.0..=n as f64).contains(&v) {
        return None;
    }
    if v == 0.0 {
        Some(0)
    } else {
        Some(v.ceil() as usize - 1)
    }
}
