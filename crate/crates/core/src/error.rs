use thiserror::Error;

/// Everything that can go wrong while coupling, coding or talking to a channel.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("kl-undefined: token {token} has mass {p} in p but none in q")]
    KlUndefined { token: u32, p: f64 },

    #[error("instance-too-large: exact coupling supports at most {max}x{max}, got {left}x{right}")]
    InstanceTooLarge {
        left: usize,
        right: usize,
        max: usize,
    },

    #[error("zero-row: index {0} carries no mass in the coupling")]
    ZeroRow(usize),

    #[error("zero-col: index {0} carries no mass in the coupling")]
    ZeroCol(usize),

    #[error("length-mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown-token: {token} is outside the vocabulary of size {vocab}")]
    UnknownToken { token: u32, vocab: usize },

    #[error("remote-unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("protocol-violation: {0}")]
    ProtocolViolation(String),

    #[error("nontermination: coupling phase exceeded {max_tokens} tokens")]
    Nontermination { max_tokens: usize },

    #[error("posterior-collapse: true value of block {block} lost all posterior mass")]
    PosteriorCollapse { block: usize },

    #[error("impossible-token: token {token} has no mass under the channel at step {step}")]
    ImpossibleToken { step: usize, token: u32 },

    #[error(
        "insufficient-tokens: stegotext ended after {consumed} tokens before every block resolved"
    )]
    InsufficientTokens { consumed: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, matching the names used in the wire protocol and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDistribution(_) => "invalid-distribution",
            Error::KlUndefined { .. } => "kl-undefined",
            Error::InstanceTooLarge { .. } => "instance-too-large",
            Error::ZeroRow(_) => "zero-row",
            Error::ZeroCol(_) => "zero-col",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::UnknownToken { .. } => "unknown-token",
            Error::RemoteUnavailable(_) => "remote-unavailable",
            Error::ProtocolViolation(_) => "protocol-violation",
            Error::Nontermination { .. } => "nontermination",
            Error::PosteriorCollapse { .. } => "posterior-collapse",
            Error::ImpossibleToken { .. } => "impossible-token",
            Error::InsufficientTokens { .. } => "insufficient-tokens",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
