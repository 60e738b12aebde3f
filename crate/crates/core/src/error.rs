use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("surface {surface}: {message}")]
    InvalidSurface { surface: usize, message: String },

    #[error("invalid prescription: {0}")]
    InvalidPrescription(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fully vignetted field point (field {field_deg:.4} deg, depth {depth})")]
    FullyVignetted { field_deg: f64, depth: String },

    #[error("no PSF energy inside the {kernel_size}x{kernel_size} window (field {field_deg:.4} deg, depth {depth})")]
    EmptyPsf {
        field_deg: f64,
        depth: String,
        kernel_size: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown lens id {0:?}")]
    UnknownLens(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
