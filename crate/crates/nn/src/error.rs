use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("index {index} out of range for embedding table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check refused: {0}")]
    NonDeterministic(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn check_shape(
    context: &'static str,
    expected: &[usize],
    actual: &[usize],
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(NnError::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        })
    }
}
