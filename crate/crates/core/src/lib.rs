//! Quadtree sparse approximate matrix multiply (SpAMM) with norm-product
//! culling, second-order spectral projection built on it, Hilbert-curve
//! ordering of point clouds, synthetic matrices with decay, and a
//! deterministic simulator of tiered task decomposition and
//! persistence-based load balancing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod error;
pub mod matgen;
pub mod mmio;
pub mod ordering;
pub mod quadtree;
pub mod sim;
pub mod sp2;
pub mod spamm;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use quadtree::{Layout, LeafBlock, Node, NodeData, OccupancyStats, QuadTreeMatrix};
pub use spamm::{convolution_census, leaf_gemm, multiply, MultiplyMode, MultiplyOptions, ProductStats, SpammTolerance};
