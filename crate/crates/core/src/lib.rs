pub mod autodiff;
pub mod cli;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pca;
pub mod pooling;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::TrainConfig;
pub use error::{Error, GraphError, Result, TensorError};
pub use graph::{HeteroGraph, Relation, RelationId};
pub use model::Model;
pub use tensor::Tensor;
