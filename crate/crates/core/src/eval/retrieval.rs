use std::collections::{BTreeMap, BTreeSet};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{coverage_at, entropy_at, ndcg_at, recall_at};
use super::Result;
use crate::ingest::{sample_negatives_into, Catalog, EvalNegatives, Interaction, SplitDataset};
use crate::models::{Model, ScoringRule};
use crate::rerank::{Candidate, Reranker};

/// Test rows, pools and category data shared by every evaluated method.
#[derive(Clone, Debug)]
pub struct EvalData {
    pub n_items: usize,
    pub n_categories: usize,
    pub item_categories: Vec<Vec<usize>>,
    /// Row-major `[M, K]` soft category targets.
    pub targets: Vec<f64>,
    /// Items each user interacted with in training, sorted.
    pub train_items: BTreeMap<usize, Vec<usize>>,
    /// Rows scored for AUC/UAUC: the test partition plus, in sampled mode,
    /// its sampled negatives.
    pub rows: Vec<Interaction>,
    /// Test users with training history, ascending.
    pub users: Vec<usize>,
    /// Test positives of each evaluated user.
    pub positives: BTreeMap<usize, Vec<usize>>,
    pub negatives_mode: EvalNegatives,
    /// Test users skipped for lack of training interactions.
    pub cold_start_users: Vec<usize>,
}

impl EvalData {
    /// `train` must be the raw training partition, without sampled negatives.
    pub fn new(split: &SplitDataset, catalog: &Catalog, use_relevance: bool) -> Result<Self> {
        let mut targets = Vec::with_capacity(catalog.n_items() * catalog.n_categories());
        for t in catalog.targets(use_relevance).map_err(crate::models::ModelError::from)? {
            targets.extend_from_slice(t.as_slice());
        }
        let mut train_items: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in &split.train {
            train_items.entry(x.user).or_default().push(x.item);
        }
        for v in train_items.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        let mut rows = split.test.clone();
        if split.negatives.eval_mode == EvalNegatives::Sampled {
            let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for x in split.all() {
                seen.entry(x.user).or_default().push(x.item);
            }
            for v in seen.values_mut() {
                v.sort_unstable();
                v.dedup();
            }
            let seed = split.negatives.seed ^ 0x7e57_0000;
            rows.extend(sample_negatives_into(&split.test, &seen, catalog.n_items(), split.negatives.ratio, seed));
        }
        let test_users: BTreeSet<usize> = split.test.iter().map(|x| x.user).collect();
        let (users, cold): (Vec<usize>, Vec<usize>) =
            test_users.into_iter().partition(|u| train_items.contains_key(u));
        if !cold.is_empty() {
            info!("{} test users have no training interactions and are skipped", cold.len());
        }
        rows.retain(|x| train_items.contains_key(&x.user));
        let mut positives: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in split.test.iter().filter(|x| x.is_positive() && train_items.contains_key(&x.user)) {
            let p = positives.entry(x.user).or_default();
            if !p.contains(&x.item) {
                p.push(x.item);
            }
        }
        Ok(Self {
            n_items: catalog.n_items(),
            n_categories: catalog.n_categories(),
            item_categories: catalog.item_categories.clone(),
            targets,
            train_items,
            rows,
            users,
            positives,
            negatives_mode: split.negatives.eval_mode,
            cold_start_users: cold,
        })
    }

    /// Retrieval pool of a user: every item not in their training history.
    pub fn pool(&self, user: usize) -> Vec<usize> {
        let seen = self.train_items.get(&user).map(Vec::as_slice).unwrap_or(&[]);
        (0..self.n_items).filter(|i| seen.binary_search(i).is_err()).collect()
    }

    pub fn target(&self, item: usize) -> &[f64] {
        &self.targets[item * self.n_categories..(item + 1) * self.n_categories]
    }
}

/// Scores and rankings of one evaluated method.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub name: String,
    /// How items were scored, echoed into report headers.
    pub scoring: String,
    /// Re-rankers only order a candidate pool, so AUC is not reported.
    pub pool_restricted: bool,
    /// Full pool order per evaluated user.
    pub rankings: BTreeMap<usize, Vec<usize>>,
    /// Score of every row of [`EvalData::rows`], when the method scores it.
    pub row_scores: Vec<Option<f64>>,
}

/// Every evaluated user's pool, scored and sorted (score desc, item asc).
pub fn scored_pools(model: &Model, rule: ScoringRule, data: &EvalData) -> Result<BTreeMap<usize, Vec<(usize, f64)>>> {
    let cache = model.cache();
    let lists: Vec<(usize, Vec<(usize, f64)>)> = data
        .users
        .par_iter()
        .map(|&u| {
            let pool = data.pool(u);
            let scores = model.score_with(&cache, u, &pool, rule)?;
            let mut pairs: Vec<(usize, f64)> = pool.into_iter().zip(scores).collect();
            pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok((u, pairs))
        })
        .collect::<std::result::Result<_, crate::models::ModelError>>()?;
    Ok(lists.into_iter().collect())
}

pub fn evaluate_model(model: &Model, rule: ScoringRule, name: &str, data: &EvalData) -> Result<MethodResult> {
    let pools = scored_pools(model, rule, data)?;
    let cache = model.cache();
    let row_scores = data
        .rows
        .iter()
        .map(|x| model.score_with(&cache, x.user, &[x.item], rule).ok().map(|s| s[0]))
        .collect();
    let scoring = match rule {
        ScoringRule::Full => format!("{}: p_hat", model.kind().name()),
        ScoringRule::CategoryIndependent => format!("{}: p_hat_perp (category-independent head)", model.kind().name()),
    };
    Ok(MethodResult {
        name: name.into(),
        scoring,
        pool_restricted: false,
        rankings: pools
            .into_iter()
            .map(|(u, l)| (u, l.into_iter().map(|(i, _)| i).collect()))
            .collect(),
        row_scores,
    })
}

/// Re-ranks the top `pool_size` items of a base model's scored pools. The
/// re-ranked candidates come first, then the rest in base order; a row's
/// score is minus its position in that order.
pub fn evaluate_reranker(
    base: &BTreeMap<usize, Vec<(usize, f64)>>,
    reranker: &Reranker,
    pool_size: usize,
    name: &str,
    data: &EvalData,
) -> Result<MethodResult> {
    let lists: Vec<(usize, Vec<usize>)> = base
        .par_iter()
        .map(|(&u, scored)| {
            let top = &scored[..pool_size.min(scored.len())];
            let cands: Vec<Candidate> = top
                .iter()
                .map(|&(item, relevance)| Candidate {
                    item,
                    relevance,
                    target: data.target(item).to_vec(),
                })
                .collect();
            let mut order = reranker.rerank(&cands, cands.len())?;
            order.extend(scored[top.len()..].iter().map(|&(i, _)| i));
            Ok((u, order))
        })
        .collect::<std::result::Result<_, crate::rerank::RerankError>>()
        .map_err(|e| super::EvalError::Invalid(e.to_string()))?;
    let rankings: BTreeMap<usize, Vec<usize>> = lists.into_iter().collect();
    let positions: BTreeMap<usize, BTreeMap<usize, usize>> = rankings
        .iter()
        .map(|(&u, order)| (u, order.iter().enumerate().map(|(p, &i)| (i, p)).collect()))
        .collect();
    let row_scores = data
        .rows
        .iter()
        .map(|x| positions.get(&x.user).and_then(|m| m.get(&x.item)).map(|&p| -(p as f64)))
        .collect();
    let scoring = match reranker {
        Reranker::Mmr { theta } => format!("mmr(theta={theta}) over top-{pool_size}; score = -position"),
        Reranker::Dpp { theta } => format!("dpp(theta={theta}) over top-{pool_size}; score = -position"),
    };
    Ok(MethodResult {
        name: name.into(),
        scoring,
        pool_restricted: true,
        rankings,
        row_scores,
    })
}

/// Top-K metrics of one user at each cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRetrieval {
    pub user: usize,
    pub recall: Vec<Option<f64>>,
    pub ndcg: Vec<Option<f64>>,
    pub cc: Vec<f64>,
    pub ce: Vec<f64>,
}

/// User-averaged top-K metrics at each cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub ks: Vec<usize>,
    pub recall: Vec<Option<f64>>,
    pub ndcg: Vec<Option<f64>>,
    pub cc: Vec<Option<f64>>,
    pub ce: Vec<Option<f64>>,
    pub per_user: Vec<UserRetrieval>,
}

/// Recall, NDCG, coverage and entropy at each K over the given rankings.
/// Users without test positives count only toward CC and CE.
pub fn retrieval_eval(
    rankings: &BTreeMap<usize, Vec<usize>>,
    data: &EvalData,
    ks: &[usize],
    entropy_base: f64,
) -> RetrievalSummary {
    let empty = Vec::new();
    let per_user: Vec<UserRetrieval> = rankings
        .iter()
        .map(|(&u, ranked)| {
            let pos = data.positives.get(&u).unwrap_or(&empty);
            UserRetrieval {
                user: u,
                recall: ks.iter().map(|&k| recall_at(ranked, pos, k)).collect(),
                ndcg: ks.iter().map(|&k| ndcg_at(ranked, pos, k)).collect(),
                cc: ks
                    .iter()
                    .map(|&k| coverage_at(ranked, &data.item_categories, data.n_categories, k))
                    .collect(),
                ce: ks
                    .iter()
                    .map(|&k| entropy_at(ranked, &data.targets, data.n_categories, k, entropy_base))
                    .collect(),
            }
        })
        .collect();
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let col = |f: &dyn Fn(&UserRetrieval) -> Option<f64>| mean(per_user.iter().filter_map(f).collect());
    RetrievalSummary {
        ks: ks.to_vec(),
        recall: (0..ks.len()).map(|j| col(&|r| r.recall[j])).collect(),
        ndcg: (0..ks.len()).map(|j| col(&|r| r.ndcg[j])).collect(),
        cc: (0..ks.len()).map(|j| col(&|r| Some(r.cc[j]))).collect(),
        ce: (0..ks.len()).map(|j| col(&|r| Some(r.ce[j]))).collect(),
        per_user,
    }
}
