use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::category_distribution;
use super::{EvalError, Result};
use crate::ingest::Interaction;

/// Test interactions whose item has exactly one particular category set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub categories: Vec<usize>,
    /// Indices into the partition the groups were built from.
    pub rows: Vec<usize>,
}

/// Groups rows by their item's exact category set and keeps the `top_n`
/// most frequent sets. Equal counts are ordered by the category set itself.
pub fn category_specific_split(
    rows: &[Interaction],
    item_categories: &[Vec<usize>],
    top_n: usize,
) -> Result<Vec<CategoryGroup>> {
    if rows.is_empty() {
        return Err(EvalError::Invalid("empty test partition".into()));
    }
    let mut by_set: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (k, x) in rows.iter().enumerate() {
        by_set.entry(item_categories[x.item].clone()).or_default().push(k);
    }
    let mut groups: Vec<CategoryGroup> = by_set
        .into_iter()
        .map(|(categories, rows)| CategoryGroup { categories, rows })
        .collect();
    groups.sort_by(|a, b| b.rows.len().cmp(&a.rows.len()).then(a.categories.cmp(&b.categories)));
    if groups.len() < top_n {
        warn!("only {} category combinations for top-{top_n}", groups.len());
    }
    groups.truncate(top_n);
    Ok(groups)
}

/// Category histograms of one user's training positives, test positives and
/// each method's top-K list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub user: usize,
    pub k: usize,
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub recommendations: BTreeMap<String, Vec<f64>>,
}

pub fn case_study_report(
    user: usize,
    train: &[Interaction],
    test: &[Interaction],
    top_k: &BTreeMap<String, Vec<usize>>,
    targets: &[f64],
    n_categories: usize,
    k: usize,
) -> CaseStudy {
    let liked = |rows: &[Interaction]| -> Vec<usize> {
        rows.iter()
            .filter(|x| x.user == user && x.is_positive())
            .map(|x| x.item)
            .collect()
    };
    CaseStudy {
        user,
        k,
        train: category_distribution(&liked(train), targets, n_categories),
        test: category_distribution(&liked(test), targets, n_categories),
        recommendations: top_k
            .iter()
            .map(|(name, items)| {
                let top: Vec<usize> = items.iter().take(k).copied().collect();
                (name.clone(), category_distribution(&top, targets, n_categories))
            })
            .collect(),
    }
}
