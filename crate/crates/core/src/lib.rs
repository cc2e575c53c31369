//! Attentional embedded graph clustering.
//!
//! A two-layer graph attention autoencoder learns node embeddings from attributes and
//! a t-order proximity matrix; a Student-t soft assignment over learned cluster centers
//! is then sharpened into a target distribution and the two objectives are trained
//! jointly.

pub mod cli;
pub mod cluster;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod proximity;
pub mod synthetic;
pub mod trainer;

use thiserror::Error;

/// Any failure, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph-io: {0}")]
    Graph(#[from] graph::GraphError),
    #[error("proximity: {0}")]
    Proximity(#[from] proximity::ProximityError),
    #[error("diff-kernels: {0}")]
    Kernel(#[from] kernels::KernelError),
    #[error("gat-autoencoder: {0}")]
    Model(model::ModelError),
    #[error("self-train: {0}")]
    Cluster(#[from] cluster::ClusterError),
    #[error("trainer: {0}")]
    Trainer(trainer::TrainerError),
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("cli: {0}")]
    Cli(String),
}

impl Error {
    /// Name of the module the error originated in.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Graph(_) => "graph-io",
            Error::Proximity(_) => "proximity",
            Error::Kernel(_) => "diff-kernels",
            Error::Model(_) => "gat-autoencoder",
            Error::Cluster(_) => "self-train",
            Error::Trainer(_) => "trainer",
            Error::Metrics(_) => "metrics",
            Error::Cli(_) => "cli",
        }
    }
}

impl From<model::ModelError> for Error {
    fn from(e: model::ModelError) -> Self {
        match e {
            model::ModelError::Kernel(k) => Error::Kernel(k),
            other => Error::Model(other),
        }
    }
}

impl From<trainer::TrainerError> for Error {
    fn from(e: trainer::TrainerError) -> Self {
        use trainer::TrainerError as T;
        match e {
            T::Model(m) => m.into(),
            T::Cluster(c) => Error::Cluster(c),
            T::Kernel(k) => Error::Kernel(k),
            T::Metrics(m) => Error::Metrics(m),
            other => Error::Trainer(other),
        }
    }
}
