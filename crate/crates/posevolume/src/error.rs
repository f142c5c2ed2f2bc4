use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by scene synthesis, file formats and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Failure inside the geometric core.
    #[error(transparent)]
    Core(#[from] posevolume_core::Error),
    /// Filesystem failure, tagged with the offending path.
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        /// file or directory involved
        path: PathBuf,
        /// underlying error
        #[source]
        source: std::io::Error,
    },
    /// A JSON config could not be parsed.
    #[error("config error in {} at line {line}, column {column}, field `{field}`: {message}", path.display())]
    ConfigParse {
        /// config file
        path: PathBuf,
        /// 1-based line
        line: usize,
        /// 1-based column
        column: usize,
        /// dotted path of the offending field, `.` for the document root
        field: String,
        /// parser message
        message: String,
    },
    /// A scene or result file does not follow the expected layout.
    #[error("schema mismatch in {}: {message}", path.display())]
    SchemaMismatch {
        /// file involved
        path: PathBuf,
        /// what was wrong
        message: String,
    },
    /// Scene sampling could not keep the object inside both images.
    #[error("no in-frustum placement found after {attempts} attempts")]
    Unplaceable {
        /// attempts made
        attempts: usize,
    },
    /// The model has fewer points than keypoint selection needs.
    #[error("model has {got} points, keypoint selection needs at least {needed}")]
    TooFewModelPoints {
        /// required points
        needed: usize,
        /// available points
        got: usize,
    },
    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Result alias for this crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
