use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, Model, ModelConfig, ModelError, ModelKind, Result};
use crate::graph::{read_checkpoint, write_checkpoint};
use crate::hashing::{sha256_file, sha256_hex};
use crate::ingest::Catalog;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "model.json";

/// Everything needed to rebuild and verify a saved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub seed: u64,
    pub schema: FeatureSchema,
    /// Digest of the split manifest the model was trained on.
    pub data_manifest_hash: String,
    pub checkpoint_sha256: String,
    pub last_epoch: usize,
    pub best_epoch: usize,
    pub best_val_uauc: Option<f64>,
    pub stale_epochs: usize,
    pub known_users: Vec<bool>,
    #[serde(default)]
    pub grid_trace: Vec<String>,
}

/// Writes the checkpoint and manifest; returns the manifest digest.
pub fn save_model(dir: &Path, model: &Model, mut manifest: ModelManifest) -> Result<String> {
    fs::create_dir_all(dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    {
        let mut w = BufWriter::new(File::create(&ckpt)?);
        write_checkpoint(&model.store, &mut w)?;
        w.flush()?;
    }
    manifest.checkpoint_sha256 = sha256_file(&ckpt)?;
    manifest.kind = model.kind();
    manifest.config = model.config.clone();
    manifest.schema = model.schema();
    manifest.known_users = model.known_users.clone();
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Loads a model, checking the checkpoint digest and, when given, that it
/// was trained on the split with manifest digest `data_hash`.
pub fn load_model(dir: &Path, catalog: &Catalog, data_hash: Option<&str>) -> Result<(Model, ModelManifest, String)> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: ModelManifest = serde_json::from_slice(&bytes)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let found = sha256_file(&ckpt)?;
    if found != manifest.checkpoint_sha256 {
        return Err(ModelError::HashMismatch {
            what: ckpt.display().to_string(),
            expected: manifest.checkpoint_sha256.clone(),
            found,
        });
    }
    if let Some(h) = data_hash {
        if h != manifest.data_manifest_hash {
            return Err(ModelError::HashMismatch {
                what: "split manifest".into(),
                expected: manifest.data_manifest_hash.clone(),
                found: h.to_string(),
            });
        }
    }
    let store = read_checkpoint(BufReader::new(File::open(&ckpt)?))?;
    let model = Model::from_store(manifest.config.clone(), catalog, store, manifest.known_users.clone())?;
    if model.schema() != manifest.schema {
        return Err(ModelError::Config("catalog does not match the model's feature schema".into()));
    }
    Ok((model, manifest, sha256_hex(&bytes)))
}

impl ModelManifest {
    pub fn new(model: &Model, seed: u64, data_manifest_hash: &str) -> Self {
        Self {
            kind: model.kind(),
            config: model.config.clone(),
            seed,
            schema: model.schema(),
            data_manifest_hash: data_manifest_hash.into(),
            checkpoint_sha256: String::new(),
            last_epoch: 0,
            best_epoch: 0,
            best_val_uauc: None,
            stale_epochs: 0,
            known_users: model.known_users.clone(),
            grid_trace: Vec::new(),
        }
    }
}
