use sobolev_track::Error;

/// Failures grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure at frame {frame}: {message}")]
    Numerical { frame: usize, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m.clone(),
            e => e.to_string(),
        }
    }

    /// Classifies a library error; `frame` is used when the error carries
    /// no frame of its own.
    pub fn from_core(e: Error, frame: usize) -> Self {
        let (frame, root) = match &e {
            Error::AtFrame { frame, .. } => (*frame, e.root().clone()),
            _ => (frame, e.clone()),
        };
        if root.is_numerical() {
            CliError::Numerical {
                frame,
                message: root.to_string(),
            }
        } else if matches!(root, Error::InvalidParameter(_)) {
            CliError::Usage(root.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}
