//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal of {len} samples is shorter than one analysis frame ({fft_size})")]
    InputTooShort { len: usize, fft_size: usize },
    #[error("invalid STFT config: {0}")]
    InvalidStftConfig(String),
    #[error("sample rates differ: {a} Hz vs {b} Hz")]
    SampleRateMismatch { a: u32, b: u32 },
    #[error("signal lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("channel {index} has length {len}, expected {expected}")]
    ChannelMismatch {
        index: usize,
        len: usize,
        expected: usize,
    },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),
    #[error("all-zero mixture: weighting term is degenerate")]
    DegenerateWeights,
    #[error("silent regressor at frequency bin {bin}: nothing to estimate")]
    DegenerateRegressor { bin: usize },
    #[error("singular normal matrix at frequency bin {bin}; set diag_load > 0")]
    SingularSystem { bin: usize },
    #[error("need at least {need} channels, got {got}")]
    TooFewChannels { got: usize, need: usize },
    #[error("noise level sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("non-finite sampler state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reference signal is silent")]
    ZeroReference,
    #[error("permutation search supports at most {max} sources, got {got}")]
    TooManySources { got: usize, max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
