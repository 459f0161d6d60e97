use thiserror::Error;

/// Errors raised by the lattice, kernel and statistics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("increment {eps} is not an integer multiple of the grid spacing 1/{n}")]
    NotGridAligned { eps: f64, n: u32 },

    #[error("index ({i}, {j}) is outside the {what}")]
    Index { i: i64, j: i64, what: &'static str },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("coupling error: {0}")]
    Coupling(String),

    #[error("quadrature error: {0}")]
    Quadrature(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("picard oracle diverged: {0}")]
    OracleDivergence(String),

    #[error("degenerate diffusion coefficient: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
