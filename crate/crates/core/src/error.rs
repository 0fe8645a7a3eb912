use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("delay {tau:e} s is outside the prefix window [0, {max:e}) s")]
    DelayOutOfRange { tau: f64, max: f64 },

    #[error("time {t:e} s is outside the signal support [{lo:e}, {hi:e}] s")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("unsupported QAM order {0} (expected 4, 16 or 64)")]
    UnsupportedQamOrder(u32),

    #[error("target at {range:.3} m is beyond the unambiguous range {max_range:.3} m")]
    TargetOutOfRange { range: f64, max_range: f64 },

    #[error("target coincides with the base station")]
    TargetAtBaseStation,

    #[error("signal has zero energy")]
    ZeroEnergy,

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("subarray length {subarray_len} must exceed the number of targets {targets}")]
    SubarrayTooShort { subarray_len: usize, targets: usize },

    #[error("MUSIC spectrum has {found} peaks, {expected} required")]
    MusicDegenerate { found: usize, expected: usize },

    #[error("empty search grid: {0}")]
    EmptyGrid(String),

    #[error("model matrix is rank deficient (coincident paths?)")]
    RankDeficient,

    #[error("position Fisher information is singular (condition number {condition:e})")]
    Unobservable { condition: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
