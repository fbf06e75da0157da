use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("a {rows}x{cols} matrix needs {} entries, got {got}", rows * cols)]
    EntryCount {
        rows: usize,
        cols: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("not a probability vector: {0}")]
    InvalidSimplex(String),

    #[error("KL reference entry {index} must be strictly positive, got {value}")]
    NonPositiveReference { index: usize, value: f64 },

    #[error("row {row} of the transport plan has zero mass")]
    DegenerateRow { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("the Sinkhorn solver only supports the entropic regularizer")]
    UnsupportedRegularizer,

    #[error("loss is not finite when probing coordinate {coordinate} ({direction} step)")]
    NonFiniteProbe {
        coordinate: usize,
        direction: &'static str,
    },

    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, trace: Vec<f64> },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
