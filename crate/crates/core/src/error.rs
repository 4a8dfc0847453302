use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("rank deficient: only {found} of {requested} endmembers found before the residual vanished")]
    RankDeficient { found: usize, requested: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("coverage incomplete{}: {uncovered} pixels uncovered after {leaves} leaves", map_index.map(|k| format!(" in map {k}")).unwrap_or_default())]
    Coverage {
        uncovered: usize,
        leaves: usize,
        map_index: Option<usize>,
    },

    #[error("kernel of width {width} does not fit an image extent of {extent}")]
    KernelTooLarge { width: usize, extent: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical methods themselves, as opposed to
    /// malformed or inconsistent inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInput(_)
                | Error::RankDeficient { .. }
                | Error::SingularSystem(_)
                | Error::Coverage { .. }
        )
    }
}
