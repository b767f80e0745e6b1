//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("non-stereo data: expected 2 channels, got {0}")]
    NonStereo(usize),
    #[error("all-zero input signal")]
    ZeroSignal,
    #[error("signal too short: {len} samples, need >= {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("roster too small: {have} subjects, split asks for {need}")]
    RosterTooSmall { have: usize, need: usize },
    #[error("diffusion time {tau} outside training support [{min}, {max}]")]
    TauOutOfRange { tau: f64, min: f64, max: f64 },
    #[error("invalid schedule: t_min {t_min} must be < t_max {t_max}")]
    InvalidSchedule { t_min: f64, t_max: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameters outside clamp range: {0}")]
    ParamOutOfRange(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("scene sampling failed after {0} rejections (infeasible constraints)")]
    SceneInfeasible(usize),
    #[error("serialization error: {0}")]
    Serde(String),
    #[error("sofa read error: {0}")]
    Sofa(String),
    #[error("wav error: {0}")]
    Wav(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Wav(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
