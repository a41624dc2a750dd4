//! Tensor-train (TT) compressed embedding tables for recommendation models.
//!
//! An `M x N` embedding table is stored as `d` small 4-way cores; a row is
//! rebuilt on demand as a chain of small matrix products. This crate holds
//! the table representation and its shape algebra, the embedding-bag
//! forward/backward kernels, core initializers, an LFU cache of hot rows
//! kept uncompressed, and the on-disk checkpoint container.

pub mod batch;
pub mod cache;
pub mod checkpoint;
pub mod element;
pub mod embedding;
mod error;
pub mod gemm;
pub mod index;
pub mod init;
pub mod matrix;
pub mod shape;
pub mod table;

pub use batch::{IndexBatch, Pooling};
pub use cache::{
    CacheEvent, CacheSchedule, CacheState, CachedBatch, FreqTable, LfuCache, Partition,
};
pub use checkpoint::{ArrayData, Checkpoint, NamedArray};
pub use element::{DType, Element};
pub use embedding::{
    backward_bags, forward_bags, sgd_step, CoreGradients, EmbeddingBagConfig, ForwardContext,
};
pub use error::{Error, Result};
pub use index::{decompose_index, recompose_index, RowIndexDigits};
pub use init::{kl_optimal_gaussian, InitKind, InitSpec, RejectionMode, ScalingMode};
pub use matrix::Matrix;
pub use shape::{plan_shapes, ShapePlan};
pub use table::TtTable;
