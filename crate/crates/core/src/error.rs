use thiserror::Error;

/// Errors raised by the matrix, solver and simulator layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("empty matrix")]
    Empty,

    #[error("block size {0} is not a power of two")]
    BlockSizeNotPowerOfTwo(usize),

    #[error("chunk size {0} is not a power of two")]
    ChunkSizeNotPowerOfTwo(usize),

    #[error("chunk size {chunk} is smaller than block size {block}")]
    ChunkSmallerThanBlock { chunk: usize, block: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric: |F[{row}][{col}] - F[{col}][{row}]| = {deviation:e}")]
    NotSymmetric { row: usize, col: usize, deviation: f64 },

    #[error("degenerate spectral bounds: eps_min = eps_max = {0}")]
    DegenerateSpectrum(f64),

    #[error("occupation {n_occ} outside (0, {n})")]
    InvalidOccupation { n_occ: usize, n: usize },

    #[error("bin edges are not strictly ascending")]
    UnsortedBinEdges,

    #[error("coordinate ({i}, {j}, {k}) outside a lattice of order {order}")]
    CoordinateOutOfRange { i: u64, j: u64, k: u64, order: u32 },

    #[error("invalid hilbert order {0} (must be 1..=21)")]
    InvalidOrder(u32),

    #[error("permutation length {got} does not match {expected}")]
    PermutationLength { expected: usize, got: usize },

    #[error("not a permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid decay parameters: {0}")]
    InvalidDecay(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chare {0} is not covered by the assignment")]
    UncoveredChare(usize),

    #[error("amdahl fit needs at least two distinct core counts")]
    DegenerateFit,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;
