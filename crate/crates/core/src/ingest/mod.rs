//! Interaction datasets: parsing, binarization, category targets,
//! chronological splits and negative sampling.

mod negatives;
mod parse;
mod split;
mod store;

pub use negatives::{sample_negatives, sample_negatives_into};
pub use parse::{
    build_catalog, parse_feature_file, parse_item_categories, parse_ratings, ItemCategoryRecord,
    TextEncoding,
};
pub use split::{binarize, chronological_split, compact, kcore_filter, per_user_split};
pub use store::{read_split_dir, write_split_dir, LoadedSplit, SplitManifest};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid UTF-8 (declare encoding = \"latin1\" for ISO-8859-1 files)")]
    Encoding { line: usize },
    #[error("line {line}: unknown {kind} id `{id}`")]
    UnknownId {
        line: usize,
        kind: &'static str,
        id: String,
    },
    #[error("line {line}: rating {rating} outside scale [{min}, {max}]")]
    RatingOutOfScale {
        line: usize,
        rating: f64,
        min: f64,
        max: f64,
    },
    #[error("threshold {threshold} outside rating scale [{min}, {max}]")]
    ThresholdOutOfScale { threshold: f64, min: f64, max: f64 },
    #[error("item without category: `{0}`")]
    ItemWithoutCategory(String),
    #[error("category relevance weights must be positive and match the category set")]
    BadRelevance,
    #[error("category index {index} out of range for {k} categories")]
    CategoryOutOfRange { index: usize, k: usize },
    #[error("chronological split needs at least 3 interactions, got {0}")]
    TooFewInteractions(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("k-core eliminates dataset")]
    KcoreEliminatesDataset,
    #[error("k must be at least 1")]
    BadK,
    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One raw rating record as read from disk, before index encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRating {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
    /// 1-based source line, for diagnostics.
    pub line: usize,
}

/// A binarized `(user, item, label)` event with its timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: u8,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user: usize, item: usize, label: u8, timestamp: i64) -> Self {
        Self {
            user,
            item,
            label,
            timestamp,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Rating scale and binarization threshold of a source dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub rating_min: f64,
    pub rating_max: f64,
    /// Ratings strictly above this become positives.
    pub threshold: f64,
}

impl DatasetDescriptor {
    /// MovieLens: 1–5 stars, positive when rating > 3.
    pub const MOVIELENS: Self = Self {
        rating_min: 1.0,
        rating_max: 5.0,
        threshold: 3.0,
    };
    /// Amazon reviews: 1–5 stars, positive when rating > 4.
    pub const AMAZON: Self = Self {
        rating_min: 1.0,
        rating_max: 5.0,
        threshold: 4.0,
    };
}

/// Users, items, categories, and optional side features.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub category_names: Vec<String>,
    /// Sorted, deduplicated category indices per item; never empty.
    pub item_categories: Vec<Vec<usize>>,
    /// Optional per-item relevance weights aligned with `item_categories`.
    #[serde(default)]
    pub item_category_weights: Vec<Option<Vec<f64>>>,
    #[serde(default)]
    pub user_feature_names: Vec<String>,
    /// Side-feature indices per user (into `user_feature_names`).
    #[serde(default)]
    pub user_features: Vec<Vec<usize>>,
    #[serde(default)]
    pub item_feature_names: Vec<String>,
    #[serde(default)]
    pub item_features: Vec<Vec<usize>>,
}

impl Catalog {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn n_user_features(&self) -> usize {
        self.user_feature_names.len()
    }

    pub fn n_item_features(&self) -> usize {
        self.item_feature_names.len()
    }

    /// Checks every structural invariant of the catalog.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_categories();
        if self.item_categories.len() != self.n_items() {
            return Err(IngestError::Invalid(format!(
                "{} items but {} category sets",
                self.n_items(),
                self.item_categories.len()
            )));
        }
        for (i, cats) in self.item_categories.iter().enumerate() {
            if cats.is_empty() {
                return Err(IngestError::ItemWithoutCategory(self.item_ids[i].clone()));
            }
            if let Some(&c) = cats.iter().find(|&&c| c >= k) {
                return Err(IngestError::CategoryOutOfRange { index: c, k });
            }
        }
        if !self.user_features.is_empty() && self.user_features.len() != self.n_users() {
            return Err(IngestError::Invalid("user feature table misaligned".into()));
        }
        if !self.item_features.is_empty() && self.item_features.len() != self.n_items() {
            return Err(IngestError::Invalid("item feature table misaligned".into()));
        }
        Ok(())
    }

    /// Soft category target of one item; relevance weights are used only when
    /// `use_relevance` is set and the item has them.
    pub fn target(&self, item: usize, use_relevance: bool) -> Result<CategoryTarget> {
        let weights = if use_relevance {
            self.item_category_weights
                .get(item)
                .and_then(|w| w.as_deref())
        } else {
            None
        };
        build_category_target(self.n_categories(), &self.item_categories[item], weights)
    }

    /// Soft category targets of every item.
    pub fn targets(&self, use_relevance: bool) -> Result<Vec<CategoryTarget>> {
        (0..self.n_items())
            .map(|i| self.target(i, use_relevance))
            .collect()
    }
}

/// A probability vector over the K categories of the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTarget(Vec<f64>);

impl CategoryTarget {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Category indices with non-zero mass.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Category with the largest mass; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = c;
            }
        }
        best
    }
}

/// Builds the soft target of a category set.
///
/// Without relevance weights the mass is spread evenly over the set; with
/// them each entry is proportional to its weight. Duplicate indices count once.
pub fn build_category_target(
    k: usize,
    categories: &[usize],
    relevance: Option<&[f64]>,
) -> Result<CategoryTarget> {
    if categories.is_empty() {
        return Err(IngestError::ItemWithoutCategory(String::new()));
    }
    if let Some(&c) = categories.iter().find(|&&c| c >= k) {
        return Err(IngestError::CategoryOutOfRange { index: c, k });
    }
    let mut v = vec![0.0; k];
    match relevance {
        None => {
            let mut set = categories.to_vec();
            set.sort_unstable();
            set.dedup();
            let share = 1.0 / set.len() as f64;
            for c in set {
                v[c] = share;
            }
        }
        Some(w) => {
            if w.len() != categories.len() || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(IngestError::BadRelevance);
            }
            for (&c, &x) in categories.iter().zip(w) {
                v[c] += x;
            }
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(CategoryTarget(v))
}

/// How evaluation partitions obtain their negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalNegatives {
    /// Only the binarized 0-labels observed in the data.
    #[default]
    RawOnly,
    /// Observed 0-labels plus sampled negatives at the training ratio.
    Sampled,
}

/// Negative-sampling settings recorded with a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativePool {
    pub ratio: usize,
    pub seed: u64,
    pub eval_mode: EvalNegatives,
}

impl Default for NegativePool {
    fn default() -> Self {
        Self {
            ratio: 1,
            seed: 0,
            eval_mode: EvalNegatives::RawOnly,
        }
    }
}

/// Train/validation/test partitions of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub negatives: NegativePool,
    pub seed: u64,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Interaction> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}
