use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
///
/// The driver maps each variant onto a process exit code, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("layout error: {0}")]
    Layout(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("CG did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Layout(_) => 2,
            Error::Convergence { .. } => 3,
            Error::ResourceCap(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Layout(_) => "layout",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Assembly(_) => "assembly",
            Error::Domain(_) => "domain",
            Error::State(_) => "state",
            Error::Convergence { .. } => "convergence",
            Error::ResourceCap(_) => "resource_cap",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
