//! End-to-end runs shared by the command line and the acceptance tests.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    build_report, evaluate_model, evaluate_reranker, scored_pools, EvalData, EvalError, EvalReport, MethodResult,
    ReportHeader,
};
use crate::hashing::sha256_files;
use crate::ingest::{
    binarize, build_catalog, chronological_split, compact, kcore_filter, parse_feature_file, parse_item_categories,
    parse_ratings, per_user_split, sample_negatives, Catalog, DatasetDescriptor, IngestError, Interaction,
    NegativePool, SplitDataset, TextEncoding,
};
use crate::models::{train, Model, ModelConfig, ModelError, ModelKind, ScoringRule, TrainOptions, TrainOutcome};
use crate::rerank::{RerankError, Reranker};
use crate::synth::{probe_disentanglement, sample_interactions, ProbeConfig, ProbeReport, SynthError, SynthWorld, WorldConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// One global timestamp order cut into train/validation/test.
    #[default]
    Global,
    /// Each user's history cut separately.
    PerUser,
}

/// How binarized interactions become a split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub ratios: [f64; 3],
    /// Minimum degree for the k-core filter; 0 disables it.
    pub kcore: usize,
    pub negatives: NegativePool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::Global,
            ratios: [0.8, 0.1, 0.1],
            kcore: 0,
            negatives: NegativePool::default(),
        }
    }
}

/// Raw input files of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInputs<'a> {
    pub ratings: &'a Path,
    pub items: &'a Path,
    pub user_features: Option<(&'a Path, Option<&'a [usize]>)>,
    pub item_features: Option<(&'a Path, Option<&'a [usize]>)>,
    pub descriptor: DatasetDescriptor,
    pub encoding: TextEncoding,
}

/// Parses, binarizes and splits raw files. Returns the split, its catalog
/// and the digest of the input files.
pub fn prepare_raw(inputs: &RawInputs<'_>, cfg: &SplitConfig, seed: u64) -> Result<(SplitDataset, Catalog, String)> {
    let ratings = parse_ratings(File::open(inputs.ratings)?, inputs.encoding)?;
    let items = parse_item_categories(File::open(inputs.items)?, inputs.encoding)?;
    let mut paths = vec![inputs.ratings, inputs.items];
    let user_features = match inputs.user_features {
        Some((p, cols)) => {
            paths.push(p);
            Some(parse_feature_file(File::open(p)?, inputs.encoding, cols)?)
        }
        None => None,
    };
    let item_features = match inputs.item_features {
        Some((p, cols)) => {
            paths.push(p);
            Some(parse_feature_file(File::open(p)?, inputs.encoding, cols)?)
        }
        None => None,
    };
    let raw_hash = sha256_files(&paths)?;
    let catalog = build_catalog(&ratings, &items, user_features.as_deref(), item_features.as_deref())?;
    let data = binarize(&ratings, &inputs.descriptor, &catalog)?;
    let (split, catalog) = make_split(&data, &catalog, cfg, seed)?;
    Ok((split, catalog, raw_hash))
}

/// Filters, compacts and splits binarized interactions.
pub fn make_split(data: &[Interaction], catalog: &Catalog, cfg: &SplitConfig, seed: u64) -> Result<(SplitDataset, Catalog)> {
    let filtered = if cfg.kcore > 0 {
        kcore_filter(data, cfg.kcore)?
    } else {
        data.to_vec()
    };
    let (rows, catalog) = if cfg.kcore > 0 {
        compact(&filtered, catalog)
    } else {
        (filtered, catalog.clone())
    };
    let mut split = match cfg.mode {
        SplitMode::Global => chronological_split(&rows, cfg.ratios, seed)?,
        SplitMode::PerUser => per_user_split(&rows, cfg.ratios, seed)?,
    };
    split.negatives = cfg.negatives;
    Ok((split, catalog))
}

/// Copy of `split` whose training partition also holds sampled negatives.
pub fn with_training_negatives(split: &SplitDataset, n_items: usize) -> SplitDataset {
    let mut out = split.clone();
    out.train = sample_negatives(split, n_items, split.negatives.ratio, split.negatives.seed);
    out
}

/// Trains one model from scratch on a raw split.
pub fn fit(config: &ModelConfig, catalog: &Catalog, split: &SplitDataset, seed: u64) -> Result<(Model, TrainOutcome)> {
    let training = with_training_negatives(split, catalog.n_items());
    let mut model = Model::new(config.clone(), catalog, seed)?;
    let outcome = train(
        &mut model,
        &training,
        &TrainOptions {
            seed,
            ..TrainOptions::default()
        },
    )?;
    Ok((model, outcome))
}

/// A trained model evaluated under one scoring rule.
pub struct Entry<'a> {
    pub name: String,
    pub model: &'a Model,
    pub rule: ScoringRule,
}

/// A re-ranker applied on top of a named model entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    pub name: String,
    pub base: String,
    pub reranker: Reranker,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub ks: Vec<usize>,
    pub entropy_base: f64,
    pub top_groups: usize,
    pub base_model: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            entropy_base: std::f64::consts::E,
            top_groups: 3,
            base_model: "NFM".into(),
        }
    }
}

/// Scores every entry and re-ranker and assembles the report. The method
/// results carry the full per-user rankings.
pub fn evaluate_all(
    entries: &[Entry<'_>],
    rerankers: &[RerankEntry],
    data: &EvalData,
    category_names: &[String],
    cfg: &ReportConfig,
    header: ReportHeader,
) -> Result<(EvalReport, Vec<MethodResult>)> {
    let mut methods: Vec<MethodResult> = Vec::new();
    for e in entries {
        methods.push(evaluate_model(e.model, e.rule, &e.name, data)?);
    }
    for r in rerankers {
        let base = entries
            .iter()
            .find(|e| e.name == r.base)
            .ok_or_else(|| PipelineError::Config(format!("re-ranker `{}` needs unknown base `{}`", r.name, r.base)))?;
        let pools = scored_pools(base.model, base.rule, data)?;
        methods.push(evaluate_reranker(&pools, &r.reranker, r.pool_size, &r.name, data)?);
    }
    let report = build_report(
        &methods,
        data,
        &cfg.base_model,
        &cfg.ks,
        cfg.entropy_base,
        category_names,
        cfg.top_groups,
        header,
    )?;
    Ok((report, methods))
}

/// Settings of one synthetic disentanglement experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthExperiment {
    pub world: WorldConfig,
    /// Items shown to each user.
    pub exposure: usize,
    pub skew: f64,
    pub split: SplitConfig,
    /// Shared by NFM and DCRS apart from the model kind.
    pub model: ModelConfig,
    pub probe: ProbeConfig,
    pub report: ReportConfig,
}

impl Default for SynthExperiment {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            exposure: 100,
            skew: 0.8,
            split: SplitConfig {
                negatives: NegativePool {
                    ratio: 0,
                    ..NegativePool::default()
                },
                ..SplitConfig::default()
            },
            model: ModelConfig::default(),
            probe: ProbeConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthOutcome {
    pub seed: u64,
    pub report: EvalReport,
    pub probes: BTreeMap<String, ProbeReport>,
    pub training: BTreeMap<String, TrainOutcome>,
}

/// Generates a world from `seed`, trains NFM and DCRS on it, evaluates
/// NFM, DCRS and DCRS_CI, and probes both trained models.
pub fn run_synth_experiment(exp: &SynthExperiment, seed: u64) -> Result<SynthOutcome> {
    let world = SynthWorld::generate(exp.world.clone(), seed)?;
    let interactions = sample_interactions(&world, exp.exposure, exp.skew, seed.wrapping_add(1))?;
    let catalog = world.catalog();
    let mut split_cfg = exp.split.clone();
    split_cfg.negatives.seed = seed.wrapping_add(2);
    let (split, catalog) = make_split(&interactions, &catalog, &split_cfg, seed)?;
    let nfm_cfg = ModelConfig {
        kind: ModelKind::Nfm,
        ..exp.model.clone()
    };
    let dcrs_cfg = ModelConfig {
        kind: ModelKind::Dcrs,
        ..exp.model.clone()
    };
    let (nfm, nfm_log) = fit(&nfm_cfg, &catalog, &split, seed.wrapping_add(3))?;
    let (dcrs, dcrs_log) = fit(&dcrs_cfg, &catalog, &split, seed.wrapping_add(3))?;

    let data = EvalData::new(&split, &catalog, nfm_cfg.use_relevance)?;
    let entries = [
        Entry {
            name: "NFM".into(),
            model: &nfm,
            rule: ScoringRule::Full,
        },
        Entry {
            name: "DCRS".into(),
            model: &dcrs,
            rule: ScoringRule::Full,
        },
        Entry {
            name: "DCRS_CI".into(),
            model: &dcrs,
            rule: ScoringRule::CategoryIndependent,
        },
    ];
    let header = ReportHeader {
        config: serde_json::to_value(exp)?,
        ..ReportHeader::default()
    };
    let (report, _) = evaluate_all(&entries, &[], &data, &catalog.category_names, &exp.report, header)?;
    let probe_cfg = ProbeConfig {
        seed: seed.wrapping_add(4),
        ..exp.probe.clone()
    };
    let mut probes = BTreeMap::new();
    probes.insert("NFM".into(), probe_disentanglement(&nfm, &world, &catalog, &data.train_items, &probe_cfg)?);
    probes.insert("DCRS".into(), probe_disentanglement(&dcrs, &world, &catalog, &data.train_items, &probe_cfg)?);
    let mut training = BTreeMap::new();
    training.insert("NFM".into(), nfm_log);
    training.insert("DCRS".into(), dcrs_log);
    Ok(SynthOutcome {
        seed,
        report,
        probes,
        training,
    })
}
