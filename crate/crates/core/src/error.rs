use ppa_qp::{QpError, Status};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible at period {period}: demand exceeds deliverable supply by {gap:.6} MWh")]
    Infeasible { period: usize, gap: f64 },
    #[error("dispatch problem infeasible (no single period lacks capacity; check storage and ramp limits)")]
    InfeasibleCoupled,
    #[error("window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<CoreError>,
    },
    #[error("solver stopped with status {status:?}: {detail}")]
    Solver { status: Status, detail: String },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("data error: {0}")]
    Data(String),
    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// True for errors caused by input files or configuration rather than the
    /// optimizer.
    pub fn is_data_error(&self) -> bool {
        match self {
            CoreError::Solver { .. } | CoreError::InfeasibleCoupled | CoreError::Infeasible { .. } => false,
            CoreError::Window { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
