use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CovError {
    #[error("logit vector contains a non-finite entry")]
    InvalidLogits,
    #[error("vocabulary must contain at least two tokens")]
    TooFewTokens,
    #[error("drafted token has zero draft probability")]
    DegenerateDraftProb,
    #[error("residual distribution has no support (p_t equals p_d)")]
    EmptyResidual,
    #[error("prefix token {0} is outside the vocabulary")]
    InvalidPrefix(u32),
    #[error("planted token count {planted} exceeds visual token count {n}")]
    InvalidPlant { planted: usize, n: usize },
    #[error("embedding with zero norm cannot be scored")]
    ZeroNormEmbedding,
    #[error("query carries no keywords")]
    NoKeywords,
    #[error("activity layer count K={k} outside [1, {l}]")]
    InvalidK { k: usize, l: usize },
    #[error("preselection count M={m} exceeds token count N={n}")]
    InvalidM { m: usize, n: usize },
    #[error("SVD rank {rank} must be below min(M={m}, d={d})")]
    InvalidRank { rank: usize, m: usize, d: usize },
    #[error("channel bandwidth must be positive")]
    InvalidChannel,
    #[error("cannot encode a NaN value as float16")]
    InvalidValue,
    #[error("frame truncated or malformed: {0}")]
    FrameError(String),
    #[error("unknown message type byte 0x{0:02x}")]
    UnknownMessage(u8),
    #[error("edge context out of sync with device segment")]
    ContextDesync,
    #[error("protocol fault: {0}")]
    ProtocolFault(String),
    #[error("transport receive timed out")]
    TransportTimeout,
    #[error("peer closed the session")]
    SessionClosed,
    #[error("session hello mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("enumeration state space too large")]
    TooLarge,
    #[error("edge-only baseline has zero cost")]
    DegenerateBaseline,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CovError>;
