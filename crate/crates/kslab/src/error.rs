use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("grid too coarse: {nodes} nodes, need at least {needed}")]
    TooCoarse { nodes: usize, needed: usize },
    #[error("derivative order {0} not supported (1..=3)")]
    UnsupportedOrder(usize),
    #[error("parity mismatch: {0}")]
    ParityMismatch(&'static str),
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("gradient is not integrable on the grid")]
    NonIntegrable,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("b = {0} outside (0, {1}]")]
    BOutOfRange(f64, f64),
    #[error("grid r_max = {r_max} is below 4 B1 = {needed}")]
    GridTooShort { r_max: f64, needed: f64 },
    #[error("negative discriminant in the radiation constant (c1 = {c1}, c2 = {c2}); b too large")]
    NegativeDiscriminant { c1: f64, c2: f64 },
    #[error("region identity violated: {0}")]
    RegionIdentity(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("M = {m} too small: pairing with the scaling direction is {pairing:e}")]
    MTooSmall { m: f64, pairing: f64 },
    #[error("grid r_max = {r_max} does not resolve the cutoff radius {needed}")]
    GridTooShort { r_max: f64, needed: f64 },
    #[error("eigensolve failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("linear solve failed at row {0}")]
    Solve(usize),
    #[error("positivity lost: min density {0:e}")]
    Positivity(f64),
    #[error("decomposition did not converge: {0}")]
    Decomposition(String),
    #[error("root bracket not found for the lifted parameter")]
    Bracket,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("negative density {0:e} beyond tolerance")]
    NegativeDensity(f64),
    #[error("insufficient dynamic range: {0}")]
    InsufficientRange(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
