//! Desk-scale DLRM-style training harness for TT-compressed embeddings:
//! model, SGD loop with cache stages, synthetic and Criteo data sources,
//! config files, and microbenchmarks.

pub mod bench;
pub mod cache_sim;
pub mod config;
pub mod criteo;
pub mod data;
mod error;
pub mod mlp;
pub mod model;
pub mod train;

pub use config::{
    ConfigFile, DataConfig, Interaction, ModelConfig, RunConfig, SyntheticConfig, TableConfig,
    TrainConfig,
};
pub use data::{generate_zipfian_batch, Batch, DataSource, RowSampler, SyntheticSource, Teacher};
pub use error::{HarnessError, Result};
pub use model::{BatchStats, Embedding, Gradients, Model};
pub use train::{run, train, IterRecord, Metrics, TrainOptions};
