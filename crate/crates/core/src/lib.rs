//! Global pooling as unbalanced optimal transport.
//!
//! A pooling layer maps a `D x N` matrix of sample features to a `D`-vector.
//! This crate computes that vector from a transport plan obtained by unrolling
//! either log-domain Sinkhorn scaling or Bregman ADMM for a fixed number of
//! modules, and provides the classic poolings (mean, max, attention, mixed)
//! the UOT formulation reproduces.

pub mod error;
pub mod experiments;
pub mod learning;
pub mod numerics;
pub mod pooling;
pub mod solver;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, SimplexVector};
pub use pooling::{PooledVector, PoolingSpec};
pub use solver::{RegularizerKind, Solver, SolverDiagnostics, TransportPlan, UotParams};
