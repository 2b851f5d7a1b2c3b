use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid incompatibility: T/h = {ratio} is not an integer (T = {t_end}, h = {h})")]
    GridIncompatible { t_end: f64, h: f64, ratio: f64 },

    #[error("step size h = {h} must lie in (0, 1)")]
    StepTooLarge { h: f64 },

    #[error("path diverged at step {step}")]
    PathDiverged { step: usize },

    #[error("s = {s} lies outside [{lower}, {upper}]")]
    OutOfRange { s: f64, lower: f64, upper: f64 },

    #[error("cannot fit exponent: {0}")]
    CannotFit(String),

    #[error(
        "decay-base construction does not apply: f(1) = {f_at_one} >= 0 \
         (requires lambda2 > lambda3 + 4 K_tilde, got {lambda2} <= {lambda3} + 4 * {k_tilde})"
    )]
    HypothesisViolated {
        f_at_one: f64,
        lambda2: f64,
        lambda3: f64,
        k_tilde: f64,
    },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
