use std::path::PathBuf;

use crate::model::NeuronId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token id {id} at position {position} is out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("neuron {neuron} out of bounds ({n_layers} layers x {d_ff} neurons)")]
    NeuronOutOfBounds {
        neuron: NeuronId,
        n_layers: usize,
        d_ff: usize,
    },

    #[error("neuron {neuron} outside {n_layers} layers")]
    LayerOutOfBounds { neuron: NeuronId, n_layers: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("{path}: invalid UTF-8")]
    Utf8 { path: PathBuf },

    #[error("unknown token {0:?} and no unknown-token id configured")]
    UnknownToken(String),

    #[error("insufficient tokens: need more than {needed}, have {available}")]
    InsufficientTokens { needed: usize, available: usize },

    #[error("fingerprint mismatch: {0} vs {1}")]
    FingerprintMismatch(String, String),

    #[error("label error: {0}")]
    Label(String),

    #[error("zero token count for label {0}")]
    ZeroTokenCount(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::TokenOutOfRange { .. } => "token_out_of_range",
            Self::SequenceTooLong { .. } => "sequence_too_long",
            Self::ShapeMismatch { .. } => "shape_mismatch",
            Self::NonFinite(_) => "non_finite",
            Self::InvalidSpec(_) => "invalid_spec",
            Self::NeuronOutOfBounds { .. } => "neuron_out_of_bounds",
            Self::LayerOutOfBounds { .. } => "neuron_out_of_bounds",
            Self::Format(_) => "format",
            Self::Io { .. } => "io",
            Self::Json(_) => "json",
            Self::Corpus(_) => "corpus",
            Self::Utf8 { .. } => "utf8",
            Self::UnknownToken(_) => "unknown_token",
            Self::InsufficientTokens { .. } => "insufficient_tokens",
            Self::FingerprintMismatch(..) => "fingerprint_mismatch",
            Self::Label(_) => "label",
            Self::ZeroTokenCount(_) => "zero_token_count",
            Self::Empty(_) => "empty",
            Self::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
