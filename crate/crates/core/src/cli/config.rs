use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::{DatasetDescriptor, TextEncoding};
use crate::models::{GridPoint, ModelConfig, ScoringRule};
use crate::pipeline::{PipelineError, ReportConfig, RerankEntry, Result, SplitConfig};
use crate::rerank::Reranker;
use crate::synth::WorldConfig;

/// Name of the resolved configuration every command leaves in its output
/// directory.
pub const FROZEN_CONFIG: &str = "config.frozen.toml";

/// Settings for every subcommand, one section each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub prepare: PrepareSection,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub rerank: RerankSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Movielens,
    Amazon,
    /// Labels written by `synth`: ratings 0 or 1.
    Synthetic,
}

impl DatasetKind {
    pub fn descriptor(self) -> DatasetDescriptor {
        match self {
            DatasetKind::Movielens => DatasetDescriptor::MOVIELENS,
            DatasetKind::Amazon => DatasetDescriptor::AMAZON,
            DatasetKind::Synthetic => crate::synth::SYNTH_DESCRIPTOR,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub ratings: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    /// 1-based feature columns to keep; all when absent.
    pub user_feature_columns: Option<Vec<usize>>,
    pub item_feature_columns: Option<Vec<usize>>,
    pub dataset: DatasetKind,
    pub encoding: TextEncoding,
    pub split: SplitConfig,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub world: WorldConfig,
    pub exposure: usize,
    pub skew: f64,
    pub out: Option<PathBuf>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            exposure: 100,
            skew: 0.8,
            out: None,
        }
    }
}

/// Hyperparameter values to search; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub l2: Vec<f64>,
    pub dropout: Vec<f64>,
}

impl GridSpec {
    /// Cartesian product in λ, learning rate, L2, dropout order.
    pub fn points(&self, base: &ModelConfig) -> Vec<GridPoint> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &lambda in &or(&self.lambda, base.lambda) {
            for &learning_rate in &or(&self.learning_rate, base.learning_rate) {
                for &l2 in &or(&self.l2, base.l2) {
                    for &dropout in &or(&self.dropout, base.dropout) {
                        out.push(GridPoint {
                            lambda,
                            learning_rate,
                            l2,
                            dropout,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub grid: GridSpec,
    /// Continue from the checkpoint already in `out`.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scoring: ScoringRule,
    pub method: Reranker,
    /// Candidates taken from the top of the base ranking.
    pub pool_size: usize,
    /// Output file of ranked candidates.
    pub out: Option<PathBuf>,
}

impl Default for RerankSection {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            scoring: ScoringRule::Full,
            method: Reranker::Mmr { theta: 0.5 },
            pool_size: 200,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub dir: PathBuf,
    #[serde(default)]
    pub scoring: ScoringRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub models: Vec<ModelSpec>,
    pub rerankers: Vec<RerankEntry>,
    pub report: ReportConfig,
    /// Length of the stored top lists used by case studies.
    pub keep_top: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            models: Vec::new(),
            rerankers: Vec::new(),
            report: ReportConfig::default(),
            keep_top: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Output directory of a previous `eval` run.
    pub eval: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// User ids for case studies; when empty, `sample_users` are drawn.
    pub users: Vec<String>,
    pub sample_users: usize,
    pub k: usize,
    /// Methods shown; all evaluated methods when empty.
    pub models: Vec<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            eval: None,
            out: None,
            users: Vec::new(),
            sample_users: 1,
            k: 10,
            models: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("config: {e}")))
    }

    /// Applies `section.key=value` overrides; values are TOML literals, and
    /// bare words are taken as strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override `{s}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (n, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| PipelineError::Config(format!("`{key}`: `{part}` is inside a non-table value")))?;
                if n + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
            }
        }
        root.try_into().map_err(|e: toml::de::Error| PipelineError::Config(format!("override: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn freeze(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FROZEN_CONFIG), self.to_toml()?)?;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Absolute form of a configured path, so frozen configs work from any
/// directory.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

pub fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| PipelineError::Config(format!("missing `{what}` (set it in the config or on the command line)")))
}
