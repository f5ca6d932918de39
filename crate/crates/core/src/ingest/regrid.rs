//! Regridding of auxiliary fields onto the model grid.
//!
//! Finer sources are averaged over the cells they fall in; coarser sources
//! are sampled at the nearest source-cell centroid.

use crate::geo::{haversine_distance, GridSpec, LonLat};

/// Mean of the source values linked to each cell; `None` where no source
/// point falls. Points outside the grid are ignored.
pub fn regrid_fine_to_grid(values: &[(LonLat, f64)], grid: &GridSpec) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; grid.n_cells()];
    let mut count = vec![0usize; grid.n_cells()];
    for &(loc, v) in values {
        if let Ok((r, c)) = grid.link_to_cell(loc) {
            let i = grid.cell_index(r, c);
            sum[i] += v;
            count[i] += 1;
        }
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Value of the coarse cell whose centroid is nearest each target centroid.
/// Equidistant candidates resolve to the smaller coarse cell index.
pub fn regrid_coarse_to_grid(coarse: &GridSpec, coarse_values: &[f64], target: &GridSpec) -> Vec<f64> {
    assert_eq!(coarse_values.len(), coarse.n_cells(), "one value per coarse cell");
    let sources = coarse.centroids();
    target
        .centroids()
        .into_iter()
        .map(|t| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &s) in sources.iter().enumerate() {
                let d = haversine_distance(t, s);
                if d < best_d - 1e-9 * best_d.min(1e12) {
                    best = i;
                    best_d = d;
                }
            }
            coarse_values[best]
        })
        .collect()
}
