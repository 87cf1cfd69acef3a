use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("target out of reach: {0}")]
    OutOfReach(String),
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("component has zero total mass")]
    DegenerateComponent,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
