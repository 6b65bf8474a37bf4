use thiserror::Error;

/// Failures raised while evaluating the cell or pack equations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("inconsistent parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("temperature must be positive, got {0} K")]
    Temperature(f64),
    #[error("electrolyte concentration must be positive, volume {index} has {value} mol/m^3")]
    Concentration { index: usize, value: f64 },
    #[error("{electrode} surface stoichiometry {value} outside (0, 1)")]
    Stoichiometry { electrode: &'static str, value: f64 },
    #[error("electrolyte conductivity {value} is not positive in volume {index}")]
    Conductivity { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Failures of the DAE integrator and its linear algebra.
#[derive(Debug, Clone, Error)]
pub enum DaeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("singular iteration matrix{context}")]
    Singular { context: String },
    #[error("consistent initialization failed after {iterations} iterations (residual trace {trace:?})")]
    Initialization { iterations: usize, trace: Vec<f64> },
    #[error("implicit step of {dt} s failed to converge (residual {residual:e}); reduce the step size")]
    Step { dt: f64, residual: f64 },
    #[error("simulation failed in sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<DaeError>,
    },
    #[error("index-1 condition violated at t = {time} s: algebraic Jacobian is singular")]
    Index { time: f64 },
}

#[derive(Debug, Clone, Error)]
pub enum QpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("Hessian is not positive semidefinite")]
    NotConvex,
    #[error("lower bound exceeds upper bound in constraint {0}")]
    Bounds(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dae(#[from] DaeError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("controller failure: {0}")]
    Controller(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
