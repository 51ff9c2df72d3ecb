use std::path::PathBuf;

use crate::image::ColorSpace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("cannot decode {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("expected a {expected:?} image, got {found:?}")]
    WrongSpace {
        expected: ColorSpace,
        found: ColorSpace,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("values outside [0, 1]: {0}")]
    BadRange(String),

    #[error("bad checkpoint: {0}")]
    Format(String),

    #[error("split has no {0} images")]
    EmptySplit(&'static str),

    #[error("missing directory: {}", .0.display())]
    MissingDirectory(PathBuf),

    #[error("unpaired images (no matching reference): {}", .0.join(", "))]
    UnpairedImage(Vec<String>),

    #[error("weights expect {weights} input channel(s) but mode {mode} needs {needed}")]
    ModeMismatch {
        weights: usize,
        mode: String,
        needed: usize,
    },

    #[error("image is {height}x{width}, needs at least {min}x{min}")]
    TooSmall { height: usize, width: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("every image failed to load ({0} attempted)")]
    AllImagesFailed(usize),
}

impl Error {
    /// Wraps an I/O failure together with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
