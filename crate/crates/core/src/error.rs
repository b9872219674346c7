use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate scale: all points coincide")]
    DegenerateScale,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),

    #[error("infeasible cardinality: n_p = {n_p} with a {n_x}x{n_y} cost matrix")]
    InfeasibleCardinality { n_p: usize, n_x: usize, n_y: usize },

    #[error("brute-force enumeration too large for a {0}x{1} instance")]
    TooLargeForEnumeration(usize, usize),

    #[error("sign pattern not covered by the facet table: {0}")]
    SignPattern(String),

    #[error("no interval contains zero")]
    NoStraddlingVariable,

    #[error("degenerate interval width in facet construction")]
    DegenerateBox,

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("box QP did not reach a KKT point")]
    QpNoKkt,

    #[error("cannot bisect a box with zero width in every dimension")]
    ZeroVolumeBox,

    #[error("assembly check failed: {0}")]
    Assembly(String),

    #[error("rotation grid needs {needed} scalars, cap is {cap}")]
    GridTooLarge { needed: usize, cap: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
