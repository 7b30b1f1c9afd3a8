use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("density is not finite at x = {x}")]
    NonFiniteDensity { x: f64 },

    #[error("density is not normalizable over [{lo}, {hi}] (integral = {integral})")]
    NotNormalizable { lo: f64, hi: f64, integral: f64 },

    #[error("ball [{lo}, {hi}] around the mode is not contained in the support [{a}, {b}]; shrink epsilon")]
    BallOutsideSupport { lo: f64, hi: f64, a: f64, b: f64 },

    #[error("state x = {x} lies outside the restriction interval [{a}, {b}] (chain state corrupt)")]
    OutsideSupport { x: f64, a: f64, b: f64 },

    #[error("chain is reducible: eigenvalue 1 has multiplicity > 1")]
    Reducible,

    #[error("start set is empty")]
    EmptyStartSet,

    #[error("path family invalid: transition probability across edge ({edge}, {next}) is zero")]
    InvalidPathFamily { edge: usize, next: usize },

    #[error("Lyapunov function is not finite at y = {y}")]
    NonFiniteLyapunov { y: f64 },

    #[error("coupling ordering violated at t = {t}: {detail}")]
    OrderingViolation { t: u64, detail: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by user-supplied configuration rather than by
    /// a failed numerical assertion.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::BallOutsideSupport { .. }
                | Error::EmptyStartSet
        )
    }
}
