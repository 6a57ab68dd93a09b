//! Run-time temporal graph learning.
//!
//! Ingests a temporal edge stream snapshot by snapshot, keeps an R-tree over
//! the node set and a random-walk corpus in sync with the graph, refreshes
//! skip-gram node embeddings from repaired walks, and trains a feed-forward
//! network online on each snapshot's batch. Every matrix product in the
//! network goes through [`kernels`], which offers four parallel dataflows
//! selectable per kernel.

pub mod fnn;
pub mod kernels;
pub mod matrix;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod rtree;
pub mod sgns;
pub mod stream;
pub mod walk;

pub use kernels::{matmul, matmul_timed, KernelConfig, KernelTiming, MmStrategy, OuterReduction};
pub use matrix::{Matrix, ShapeError};
pub use stream::{EdgeEvent, NodeId, Snapshot, SnapshotDelta, TemporalGraph};
