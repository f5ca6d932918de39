use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: lon={lon}, lat={lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("location (lon={lon}, lat={lat}) lies outside the grid extent")]
    OutOfDomain { lon: f64, lat: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate observation for site `{site}` on {date}")]
    DuplicateKey {
        path: String,
        line: usize,
        site: String,
        date: String,
    },

    #[error("singular design: column `{column}` is collinear with earlier columns {others:?}")]
    SingularDesign { column: String, others: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no active training observation within range of the target")]
    NoNeighbor,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("variogram fit did not improve on the initial parameters (nugget={nugget}, partial_sill={partial_sill}, range_km={range_km})")]
    FitFailure {
        nugget: f64,
        partial_sill: f64,
        range_km: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing covariate: {0}")]
    MissingCovariate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{candidates} candidate predictors exceed the exhaustive-search budget of {max}")]
    BudgetExceeded { candidates: usize, max: usize },

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("leakage: {0}")]
    Leakage(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
