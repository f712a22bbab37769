use thiserror::Error;

/// Errors raised by the scene model, losses and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scene layout is empty; cannot initialize Gaussians")]
    EmptyLayout,

    #[error("need at least two training cameras to sample pseudo views, got {0}")]
    NotEnoughCameras(usize),

    #[error("non-finite loss at phase {phase} iteration {iteration}: {snapshot}")]
    NonFiniteLoss {
        phase: u8,
        iteration: usize,
        snapshot: String,
    },

    #[error("query `{0}` matches no class")]
    UnknownQuery(String),

    #[error("teacher scene generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error in {path}: {message}")]
    Image { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A structured parse failure in one of the binary formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{format}: {kind} while reading `{field}` at byte offset {offset}")]
pub struct FormatError {
    pub format: &'static str,
    pub field: String,
    pub offset: usize,
    pub kind: FormatErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    Truncated,
    Invalid(String),
}

impl std::fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatErrorKind::BadMagic => write!(f, "bad magic"),
            FormatErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            FormatErrorKind::Truncated => write!(f, "unexpected end of data"),
            FormatErrorKind::Invalid(msg) => write!(f, "invalid value ({msg})"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
