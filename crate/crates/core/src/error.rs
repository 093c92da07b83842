use thiserror::Error;

pub type Result<T> = std::result::Result<T, GravityError>;

#[derive(Debug, Error)]
pub enum GravityError {
    #[error("no regime entry for {country} in {year}")]
    MissingRegime { country: String, year: i32 },

    #[error("contradictory regime rows for {country} in {year}")]
    ContradictoryRegime { country: String, year: i32 },

    #[error("invalid regime table: {0}")]
    InvalidRegime(String),

    #[error("duplicate observations: {}", .0.join(", "))]
    DuplicateObservations(Vec<String>),

    #[error("invalid flow {value} for {key}")]
    InvalidFlow { key: String, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty covariate set")]
    EmptyFormula,

    #[error("nothing identifiable: every covariate was dropped")]
    NothingIdentifiable,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("outcome is zero for every observation")]
    AllZeroOutcome,

    #[error("invalid outcome at row {row}: {value}")]
    InvalidOutcome { row: usize, value: f64 },

    #[error("PPML did not converge after {} iterations (last deviance {last_deviance})", .iterations)]
    NotConverged {
        iterations: usize,
        last_beta: Vec<f64>,
        last_deviance: f64,
        deviance_history: Vec<f64>,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid trade matrix: {0}")]
    InvalidMatrix(String),

    #[error("zero expenditure column for importer {0}")]
    ZeroColumn(String),

    #[error("counterfactual solver did not converge after {iterations} iterations (residual {})", .residual_trace.last().copied().unwrap_or(f64::NAN))]
    SolverNotConverged {
        iterations: usize,
        residual_trace: Vec<f64>,
    },

    #[error("unknown country: {0}")]
    UnknownCountry(String),

    #[error("unknown country codes: {}", .0.join(", "))]
    UnknownCountryCodes(Vec<String>),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Generator(String),
}
