//! NFM backbone, the disentangled DCRS model and the trainable baselines.

mod features;
mod io;
mod ips;
mod net;
mod train;

pub use features::{FeatureBag, FeatureSchema, FeatureTable};
pub use io::{load_model, save_model, ModelManifest, CHECKPOINT_FILE, MANIFEST_FILE};
pub use ips::ips_weights;
pub use net::{Batch, DcrsNodes, ForwardOutput, LossTerms, Model, PairCache};
pub use train::{grid_search, train, validate, EpochLog, GridOutcome, GridPoint, GridRun, TrainOptions, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("cold-start user {0}: no training interactions, cannot score")]
    ColdStart(usize),
    #[error("item {item} out of range for {n_items} items")]
    UnknownItem { item: usize, n_items: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("no validation user has both classes; cannot select a checkpoint")]
    NoValidationSignal,
    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nfm,
    Dcrs,
    Unawareness,
    Ips,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nfm => "nfm",
            ModelKind::Dcrs => "dcrs",
            ModelKind::Unawareness => "unawareness",
            ModelKind::Ips => "ips",
        }
    }

    pub fn is_disentangled(self) -> bool {
        self == ModelKind::Dcrs
    }

    pub fn uses_categories(self) -> bool {
        self != ModelKind::Unawareness
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nfm" => Ok(ModelKind::Nfm),
            "dcrs" => Ok(ModelKind::Dcrs),
            "unawareness" => Ok(ModelKind::Unawareness),
            "ips" => Ok(ModelKind::Ips),
            other => Err(ModelError::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Which DCRS head ranks items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringRule {
    /// The model's main prediction (p̂ for DCRS and the baselines).
    #[default]
    Full,
    /// DCRS_CI: the category-independent head p̂⊥ only.
    CategoryIndependent,
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Embedding width d; DCRS tables are 2d wide.
    pub dim: usize,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Adversarial weight λ (DCRS only).
    pub lambda: f64,
    /// Propensity floor (IPS only).
    pub ips_clip: f64,
    pub init_std: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Build category targets from relevance weights when the catalog has them.
    pub use_relevance: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Nfm,
            dim: 64,
            dropout: 0.3,
            l2: 0.0,
            learning_rate: 0.05,
            epsilon: 1e-10,
            lambda: 0.1,
            ips_clip: 0.05,
            init_std: 0.1,
            batch_size: 1024,
            max_epochs: 100,
            patience: 5,
            use_relevance: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.ips_clip > 0.0 && self.ips_clip <= 1.0) {
            return bad("ips_clip must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch cap must be positive");
        }
        if !(self.init_std >= 0.0) {
            return bad("init_std must be non-negative");
        }
        Ok(())
    }

    /// Width of the backbone representation.
    pub fn width(&self) -> usize {
        if self.kind.is_disentangled() {
            2 * self.dim
        } else {
            self.dim
        }
    }
}
