use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter outside its admissible window.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// An iterative method hit its cap before reaching tolerance.
    #[error("{context}: no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence {
        context: String,
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    /// A line search could not decrease a functional that should be strictly convex.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Failure inside a time step, tagged with the step index.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A cylinder or region is outside the domain or below the grid resolution.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A trajectory file failed validation.
    #[error("corrupt trajectory file: {0}")]
    Corrupt(String),

    /// A numerical routine received degenerate input.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Convergence { .. } | Error::Contract(_) | Error::Step { .. } | Error::Numeric(_) => 3,
            Error::Corrupt(_) => 4,
            Error::Geometry(_) => 5,
            Error::Io(_) => 1,
        }
    }
}
