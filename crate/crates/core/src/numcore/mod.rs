//! Numerical substrate: dense/sparse linear algebra, the reverse-mode tape,
//! Adam, finite-difference verification, and deterministic random streams.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod rng;
pub mod sparse;
pub mod tape;

pub use adam::AdamState;
pub use dense::DenseMatrix;
pub use gradcheck::grad_check;
pub use rng::Rng;
pub use sparse::{normalize_adjacency, spmm, SparseAdjacency};
pub use tape::{Gradients, NodeId, ParamId, ParamStore, Tape};
