//! Loading, writing, regridding and synthesising study data.

mod csvio;
mod regrid;
pub mod synthetic;

pub use csvio::*;
pub use regrid::{regrid_coarse_to_grid, regrid_fine_to_grid};
pub use synthetic::{generate_synthetic, write_synthetic, SyntheticConfig, SyntheticTruth};
