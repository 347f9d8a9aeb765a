//! Synthetic worlds whose labels follow a known product of a category
//! preference and a category-independent quality factor, plus probes that
//! check what a trained model recovered.

mod probe;
mod world;

pub use probe::{category_probe, probe_disentanglement, spearman, ProbeConfig, ProbeReport};
pub use world::{
    read_world, sample_interactions, write_world, write_world_as_raw, SynthWorld, WorldConfig, RAW_ITEMS, RAW_RATINGS, SYNTH_DESCRIPTOR,
    WorldManifest,
};

use thiserror::Error;

use crate::graph::GraphError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic world parameter: {0}")]
    BadParameter(String),
    #[error("world file: {0}")]
    Format(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;
