use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, DatasetDescriptor, IngestError, Interaction, NegativePool, Result, SplitDataset};
use crate::hashing::{sha256_file, sha256_hex};

const PARTITIONS: [&str; 3] = ["train", "validation", "test"];
const HEADER: &str = "user\titem\tlabel\ttimestamp";

/// Summary written next to a split so later stages can verify their inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub descriptor: DatasetDescriptor,
    pub seed: u64,
    pub negatives: NegativePool,
    pub split_mode: String,
    pub kcore: usize,
    /// Digest of the raw input files the split was built from.
    pub raw_hash: String,
    /// SHA-256 of every data file in the directory.
    pub files: BTreeMap<String, String>,
}

fn write_partition(path: &Path, rows: &[Interaction]) -> Result<()> {
    let mut s = String::with_capacity(rows.len() * 24);
    s.push_str(HEADER);
    s.push('\n');
    for x in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", x.user, x.item, x.label, x.timestamp);
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_partition(path: &Path) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if k == 0 && line == HEADER || line.is_empty() {
            continue;
        }
        let bad = |msg: &str| IngestError::Parse {
            line: k + 1,
            msg: format!("{}: {msg}", path.display()),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let user = f[0].parse().map_err(|_| bad("bad user index"))?;
        let item = f[1].parse().map_err(|_| bad("bad item index"))?;
        let label: u8 = f[2].parse().map_err(|_| bad("bad label"))?;
        if label > 1 {
            return Err(bad("label must be 0 or 1"));
        }
        let timestamp = f[3].parse().map_err(|_| bad("bad timestamp"))?;
        out.push(Interaction::new(user, item, label, timestamp));
    }
    Ok(out)
}

/// Writes the three partitions, the catalog and the manifest. Returns the
/// manifest's own digest, which downstream artifacts record.
pub fn write_split_dir(
    dir: &Path,
    split: &SplitDataset,
    catalog: &Catalog,
    mut manifest: SplitManifest,
) -> Result<String> {
    fs::create_dir_all(dir)?;
    let parts = [&split.train, &split.validation, &split.test];
    manifest.files.clear();
    for (name, rows) in PARTITIONS.iter().zip(parts) {
        let file = format!("{name}.tsv");
        let path = dir.join(&file);
        write_partition(&path, rows)?;
        manifest.files.insert(file, sha256_file(&path)?);
    }
    let cat_path = dir.join("catalog.json");
    fs::write(&cat_path, serde_json::to_vec_pretty(catalog)?)?;
    manifest.files.insert("catalog.json".into(), sha256_file(&cat_path)?);
    manifest.n_users = catalog.n_users();
    manifest.n_items = catalog.n_items();
    manifest.n_categories = catalog.n_categories();
    manifest.n_train = split.train.len();
    manifest.n_validation = split.validation.len();
    manifest.n_test = split.test.len();
    manifest.seed = split.seed;
    manifest.negatives = split.negatives;
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// A split loaded back from disk, with every file checked against the manifest.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub split: SplitDataset,
    pub catalog: Catalog,
    pub manifest: SplitManifest,
    pub manifest_hash: String,
}

pub fn read_split_dir(dir: &Path) -> Result<LoadedSplit> {
    let bytes = fs::read(dir.join("manifest.json"))?;
    let manifest: SplitManifest = serde_json::from_slice(&bytes)?;
    for (file, expected) in &manifest.files {
        let found = sha256_file(&dir.join(file))?;
        if &found != expected {
            return Err(IngestError::HashMismatch {
                what: file.clone(),
                expected: expected.clone(),
                found,
            });
        }
    }
    let catalog: Catalog = serde_json::from_slice(&fs::read(dir.join("catalog.json"))?)?;
    catalog.validate()?;
    let mut parts = PARTITIONS
        .iter()
        .map(|p| read_partition(&dir.join(format!("{p}.tsv"))))
        .collect::<Result<Vec<_>>>()?;
    for x in parts.iter().flatten() {
        if x.user >= catalog.n_users() || x.item >= catalog.n_items() {
            return Err(IngestError::Invalid(format!(
                "interaction ({}, {}) outside catalog",
                x.user, x.item
            )));
        }
    }
    let test = parts.pop().unwrap_or_default();
    let validation = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(LoadedSplit {
        split: SplitDataset {
            train,
            validation,
            test,
            negatives: manifest.negatives,
            seed: manifest.seed,
        },
        catalog,
        manifest,
        manifest_hash: sha256_hex(&bytes),
    })
}

impl SplitManifest {
    pub fn new(descriptor: DatasetDescriptor, split_mode: &str, kcore: usize, raw_hash: String) -> Self {
        Self {
            n_users: 0,
            n_items: 0,
            n_categories: 0,
            n_train: 0,
            n_validation: 0,
            n_test: 0,
            descriptor,
            seed: 0,
            negatives: NegativePool::default(),
            split_mode: split_mode.into(),
            kcore,
            raw_hash,
            files: BTreeMap::new(),
        }
    }
}
