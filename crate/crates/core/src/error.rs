use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid time window: t_start {t_start} > t_end {t_end}")]
    InvalidWindow { t_start: u64, t_end: u64 },

    #[error("resolution mismatch: {a:?} vs {b:?}")]
    ResolutionMismatch { a: (u32, u32), b: (u32, u32) },

    #[error("empty scene")]
    EmptyScene,

    #[error("render result does not match the given scene/view")]
    RenderTagMismatch,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("bad file format in {path}: {detail} (offset {offset})")]
    BadFormat {
        path: PathBuf,
        detail: String,
        offset: u64,
    },

    #[error("manifest validation failed: {0}")]
    ManifestInvalid(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    /// The CLI maps these to exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidWindow { .. }
                | Error::ResolutionMismatch { .. }
                | Error::EmptyScene
                | Error::BadFormat { .. }
                | Error::ManifestInvalid(_)
        )
    }
}
