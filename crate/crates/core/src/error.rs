use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected end of file at byte offset {offset}")]
    UnexpectedEof { offset: usize },

    #[error("{count} trailing bytes after payload at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },

    #[error("non-finite value at ({sentence},{layer},{token},{dim})")]
    NonFinite {
        sentence: usize,
        layer: usize,
        token: usize,
        dim: usize,
    },

    #[error("dump must contain at least one sentence")]
    EmptyDump,

    #[error("invalid dump: {0}")]
    InvalidDump(String),

    #[error("invalid encoded model: {0}")]
    InvalidModel(String),

    #[error("token matrix is empty")]
    EmptyTokens,

    #[error("layer {layer} out of range (n_layers = {n_layers})")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("probe has no informative neurons (all weights zero){}", layer_suffix(.layer))]
    NoInformativeNeurons { layer: Option<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn layer_suffix(layer: &Option<usize>) -> String {
    match layer {
        Some(l) => format!(" in layer {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the contents of an input file rather than
    /// by caller-supplied parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::UnexpectedEof { .. }
                | Error::TrailingBytes { .. }
                | Error::NonFinite { .. }
                | Error::EmptyDump
                | Error::InvalidDump(_)
                | Error::InvalidModel(_)
                | Error::DimensionMismatch { .. }
                | Error::LayerOutOfRange { .. }
                | Error::EmptyTokens
                | Error::Io(_)
        )
    }
}
