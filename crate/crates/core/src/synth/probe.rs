use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SynthError, SynthWorld};
use crate::graph::{adagrad_step, ParamStore, Tape, Tensor};
use crate::ingest::Catalog;
use crate::models::{Model, ScoringRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Random (user, item) pairs whose representations feed the probe.
    pub n_pairs: usize,
    pub train_fraction: f64,
    /// (user, category) groups with fewer candidate items are skipped.
    pub min_group_items: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 128,
            n_pairs: 5000,
            train_fraction: 0.8,
            min_group_items: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Majority-class rate on the probe test pairs.
    pub chance: f64,
    /// Held-out accuracy of a linear category classifier on the full `h`.
    pub full_accuracy: f64,
    /// Same on `h^C` and `h⊥`; only for disentangled models.
    pub category_half_accuracy: Option<f64>,
    pub independent_half_accuracy: Option<f64>,
    /// Mean Spearman correlation, over (user, category) groups, between the
    /// model's category-independent score and the true σ(z_u · z_i).
    pub rank_correlation: Option<f64>,
    pub rank_groups: usize,
}

/// Spearman correlation with average ranks for ties; `None` when either
/// side is constant or the inputs are shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let m = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &j in &idx[start..end] {
            ranks[j] = r;
        }
        start = end;
    }
    ranks
}

/// Trains a fresh linear softmax classifier on standardized `features` and
/// returns `(held-out accuracy, majority-class rate)` on the last
/// `1 - train_fraction` of the rows.
pub fn category_probe(features: &[Vec<f64>], labels: &[usize], k: usize, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    let n = features.len();
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n || labels.len() != n {
        return Err(SynthError::BadParameter(format!("cannot split {n} probe rows")));
    }
    let width = features[0].len();
    let mut mean = vec![0.0; width];
    let mut sd = vec![0.0; width];
    for f in &features[..n_train] {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x / n_train as f64;
        }
    }
    for f in &features[..n_train] {
        for ((s, x), m) in sd.iter_mut().zip(f).zip(&mean) {
            *s += (x - m) * (x - m) / n_train as f64;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect())
        .collect();

    let mut store = ParamStore::new();
    let w = store.add("probe_w", Tensor::zeros(vec![width, k]))?;
    let b = store.add("probe_b", Tensor::zeros(vec![1, k]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let data: Vec<f64> = chunk.iter().flat_map(|&r| x[r].iter().copied()).collect();
            let mut targets = vec![0.0; chunk.len() * k];
            for (j, &r) in chunk.iter().enumerate() {
                targets[j * k + labels[r]] = 1.0;
            }
            let input = tape.input(Tensor::matrix(chunk.len(), width, data));
            let (wn, bn) = (tape.param(&store, w), tape.param(&store, b));
            let logits = tape.affine(input, wn, Some(bn))?;
            let losses = tape.soft_xent(logits, &targets)?;
            let loss = tape.mean(losses);
            tape.backward(loss, &mut store)?;
            adagrad_step(&mut store, cfg.learning_rate, 1e-10)?;
        }
    }
    let (wv, bv) = (&store.get(w).value, &store.get(b).value);
    let mut correct = 0usize;
    let mut counts = vec![0usize; k];
    for r in n_train..n {
        let scores: Vec<f64> = (0..k)
            .map(|c| bv[c] + x[r].iter().enumerate().map(|(j, v)| v * wv[j * k + c]).sum::<f64>())
            .collect();
        let pred = (0..k).fold(0, |best, c| if scores[c] > scores[best] { c } else { best });
        correct += (pred == labels[r]) as usize;
        counts[labels[r]] += 1;
    }
    let held = (n - n_train) as f64;
    Ok((correct as f64 / held, *counts.iter().max().unwrap_or(&0) as f64 / held))
}

fn primary_category(world: &SynthWorld, item: usize) -> usize {
    let t = world.item_target(item);
    (0..t.len()).fold(0, |best, c| if t[c] > t[best] { c } else { best })
}

/// Probes a trained model against the world it was trained on.
///
/// `catalog` is the catalog the model was built from; world users and items
/// are matched to it by id (`u{n}`, `i{n}`). `exclude` lists, per catalog
/// user, items left out of the rank-correlation groups (normally the
/// training items).
pub fn probe_disentanglement(
    model: &Model,
    world: &SynthWorld,
    catalog: &Catalog,
    exclude: &BTreeMap<usize, Vec<usize>>,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let user_index: HashMap<&str, usize> = catalog.user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> = catalog.item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    // (world index, catalog index) of scoreable users and of items.
    let users: Vec<(usize, usize)> = (0..world.n_users())
        .filter_map(|u| user_index.get(format!("u{u}").as_str()).map(|&c| (u, c)))
        .filter(|&(_, c)| model.known_users.get(c).copied().unwrap_or(false))
        .collect();
    let items: Vec<(usize, usize)> = (0..world.n_items())
        .filter_map(|i| item_index.get(format!("i{i}").as_str()).map(|&c| (i, c)))
        .collect();
    if users.is_empty() || items.is_empty() {
        return Err(SynthError::BadParameter("no world user or item is known to the model".into()));
    }

    let cache = model.cache();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reps = Vec::with_capacity(cfg.n_pairs);
    let mut labels = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let (_, cu) = users[rng.random_range(0..users.len())];
        let (wi, ci) = items[rng.random_range(0..items.len())];
        reps.push(model.representation(&cache, cu, ci));
        labels.push(primary_category(world, wi));
    }
    let k = world.n_categories();
    let (full_accuracy, chance) = category_probe(&reps, &labels, k, cfg)?;
    let (category_half_accuracy, independent_half_accuracy) = if model.kind().is_disentangled() {
        let d = model.config.dim;
        let perp: Vec<Vec<f64>> = reps.iter().map(|h| h[..d].to_vec()).collect();
        let cat: Vec<Vec<f64>> = reps.iter().map(|h| h[d..].to_vec()).collect();
        (Some(category_probe(&cat, &labels, k, cfg)?.0), Some(category_probe(&perp, &labels, k, cfg)?.0))
    } else {
        (None, None)
    };

    let rule = if model.kind().is_disentangled() {
        ScoringRule::CategoryIndependent
    } else {
        ScoringRule::Full
    };
    let mut total = 0.0;
    let mut groups = 0usize;
    for &(wu, cu) in &users {
        let skip = exclude.get(&cu).map(Vec::as_slice).unwrap_or(&[]);
        let mut by_cat: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
        for &(wi, ci) in &items {
            if !skip.contains(&ci) {
                by_cat[primary_category(world, wi)].push((wi, ci));
            }
        }
        for group in by_cat.iter().filter(|g| g.len() >= cfg.min_group_items.max(2)) {
            let ids: Vec<usize> = group.iter().map(|p| p.1).collect();
            let scores = model.score_with(&cache, cu, &ids, rule)?;
            let truth: Vec<f64> = group.iter().map(|p| world.p_perp(wu, p.0)).collect();
            if let Some(r) = spearman(&scores, &truth) {
                total += r;
                groups += 1;
            }
        }
    }
    Ok(ProbeReport {
        chance,
        full_accuracy,
        category_half_accuracy,
        independent_half_accuracy,
        rank_correlation: (groups > 0).then(|| total / groups as f64),
        rank_groups: groups,
    })
}
