use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (max deviation {max_dev:.3e})")]
    NonHermitian { max_dev: f64 },
    #[error("target is not a rank-1 projector (‖P²−P‖={dev:.3e}, Tr={trace:.6})")]
    NotRankOne { dev: f64, trace: f64 },
    #[error("negative propagation time {0} ps")]
    NegativeTime(f64),
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: String, reason: String },
    #[error("polarization vector is not unit norm (‖v‖={0})")]
    NonUnitPolarization(f64),
    #[error("singular linear system")]
    SingularSystem,
    #[error("emission window not converged: residual trion population {residual:.3e} at t={t_ps} ps")]
    NonConvergedWindow { residual: f64, t_ps: f64 },
    #[error("photon count k={0} outside supported range 1..=4")]
    PhotonCountOutOfRange(usize),
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
    #[error("probability out of range: {name}={value}")]
    ProbabilityOutOfRange { name: String, value: f64 },
    #[error("Monte-Carlo sample {index} failed: {source}")]
    SampleFailed {
        index: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("zero uncertainty in dataset row {0}")]
    ZeroUncertainty(usize),
    #[error("tag stream format: {0}")]
    TagFormat(#[from] TagFormatError),
    #[error("coincidence window {window_ps} ps exceeds half the minimum inter-pulse gap {gap_ps} ps")]
    WindowTooLarge { window_ps: u64, gap_ps: u64 },
    #[error("tag stream is not sorted at record {0}")]
    UnsortedStream(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised while decoding the binary tag-stream format.
#[derive(Debug, Error)]
pub enum TagFormatError {
    #[error("bad magic {found:02x?}, expected \"SPINTAG1\"")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("stream truncated at record {record_index} (expected {expected} records)")]
    Truncated { record_index: u64, expected: u64 },
    #[error("header field out of range: {0}")]
    InvalidHeader(String),
    #[error("record {index}: channel {channel} out of range")]
    BadChannel { index: u64, channel: u8 },
}

pub type Result<T> = std::result::Result<T, Error>;
