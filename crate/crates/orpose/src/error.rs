use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] orpose_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Refused(String),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl ToString) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), msg: msg.to_string() }
    }

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Refused(_) => "refused",
            Error::Config(_) => "invalid_config",
        }
    }

    /// `error kind=<tag> message=<json string>` on one line.
    pub fn one_line(&self) -> String {
        format!("error kind={} message={}", self.kind(), serde_json::to_string(&self.to_string()).unwrap())
    }
}
