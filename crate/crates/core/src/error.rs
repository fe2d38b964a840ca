use thiserror::Error;

/// Errors raised by model construction and the embedding pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("coupling violates conservation: monomial y{}*y{}*y{} has coefficient {coefficient:e}{}", .monomial[0] + 1, .monomial[1] + 1, .monomial[2] + 1, offending_term_suffix(.term))]
    UnbalancedCoupling {
        monomial: [usize; 3],
        coefficient: f64,
        term: Option<(usize, usize, usize, f64)>,
    },
}

fn offending_term_suffix(term: &Option<(usize, usize, usize, f64)>) -> String {
    match term {
        Some((i, j, k, c)) => format!(" (from term i={i}, j={j}, k={k}, c={c})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
