use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid dimensions {width}x{height}")]
    InvalidGrid { width: usize, height: usize },

    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate region: {0}")]
    DegenerateRegion(&'static str),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("tracking failure: region collapsed to {pixels} pixels")]
    TrackingFailure { pixels: usize },

    #[error("transport failure: newly covered pixel {pixel} has no neighbour in the previous region")]
    TransportFailure { pixel: usize },

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid synthetic script: {0}")]
    InvalidScript(String),
}

impl Error {
    pub fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ Error::AtFrame { .. } => e,
            e => Error::AtFrame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through frame annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }

    /// Failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SolverFailure { .. } | Error::TrackingFailure { .. } | Error::TransportFailure { .. } | Error::DegenerateRegion(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
