use std::collections::BTreeMap;

use super::{EvalError, Result};

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half. `None` when either
/// class is missing.
///
/// Computed from integer pair counts over score groups, so the result is
/// the correctly rounded value of the exact rational.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut pos, mut neg) = (0u64, 0u64);
    // Twice the Mann–Whitney U statistic.
    let mut twice_u: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[k]]).is_eq() {
            if labels[order[j]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice_u += 2 * gp as u128 * neg as u128 + gp as u128 * gn as u128;
        pos += gp;
        neg += gn;
        k = j;
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// One user's AUC with the class counts behind it.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UserAuc {
    pub user: usize,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// AUC of every user having both classes, in ascending user order.
/// Rows are `(user, score, label)`.
pub fn user_aucs(rows: &[(usize, f64, u8)]) -> Vec<UserAuc> {
    let mut by_user: BTreeMap<usize, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for &(u, s, y) in rows {
        let e = by_user.entry(u).or_default();
        e.0.push(s);
        e.1.push(y);
    }
    by_user
        .into_iter()
        .filter_map(|(user, (s, y))| {
            let positives = y.iter().filter(|&&v| v == 1).count();
            auc(&s, &y).map(|auc| UserAuc {
                user,
                auc,
                positives,
                negatives: y.len() - positives,
            })
        })
        .collect()
}

/// Unweighted mean of per-user AUC over users with both classes.
pub fn uauc(rows: &[(usize, f64, u8)]) -> Result<f64> {
    mean_auc(&user_aucs(rows))
}

pub fn mean_auc(users: &[UserAuc]) -> Result<f64> {
    if users.is_empty() {
        return Err(EvalError::NoEligibleUser);
    }
    Ok(users.iter().map(|u| u.auc).sum::<f64>() / users.len() as f64)
}

/// Relative UAUC improvement over a base model, in percent, measured above
/// the 0.5 random-guess floor.
pub fn relaimpr(measured: f64, base: f64) -> Result<f64> {
    if !(base > 0.5) {
        return Err(EvalError::DegenerateBase(base));
    }
    Ok(((measured - 0.5) / (base - 0.5) - 1.0) * 100.0)
}

/// Recall@K: share of the user's positives that appear in the top K.
pub fn recall_at(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| positives.contains(i)).count();
    Some(hits as f64 / positives.len() as f64)
}

/// NDCG@K with binary gains and log2 discounts; the ideal list places
/// `min(K, #positives)` hits first.
pub fn ndcg_at(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| positives.contains(i))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..k.min(positives.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    Some(dcg / ideal)
}

/// Category coverage: distinct categories among the top K over the total
/// category count. Every category of a multi-category item counts fully.
pub fn coverage_at(ranked: &[usize], item_categories: &[Vec<usize>], n_categories: usize, k: usize) -> f64 {
    let mut seen = vec![false; n_categories];
    for &i in ranked.iter().take(k) {
        for &c in &item_categories[i] {
            seen[c] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / n_categories as f64
}

/// Normalized category distribution of the top K, each item contributing
/// its soft target. `targets` is row-major `[M, K_total]`.
pub fn category_distribution(items: &[usize], targets: &[f64], n_categories: usize) -> Vec<f64> {
    let mut q = vec![0.0; n_categories];
    for &i in items {
        for (a, t) in q.iter_mut().zip(&targets[i * n_categories..(i + 1) * n_categories]) {
            *a += t;
        }
    }
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter_mut().for_each(|v| *v /= total);
    }
    q
}

/// Shannon entropy of a distribution in the given log base (`E` for nats).
pub fn entropy(q: &[f64], base: f64) -> f64 {
    let h: f64 = -q.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    let h = if base == std::f64::consts::E { h } else { h / base.ln() };
    h.max(0.0)
}

/// Category entropy of the top K.
pub fn entropy_at(ranked: &[usize], targets: &[f64], n_categories: usize, k: usize, base: f64) -> f64 {
    let top: Vec<usize> = ranked.iter().take(k).copied().collect();
    entropy(&category_distribution(&top, targets, n_categories), base)
}

/// Items ordered by score descending, ties by lower item index.
pub fn rank_items(items: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(items[a].cmp(&items[b])));
    order.into_iter().map(|k| items[k]).collect()
}
