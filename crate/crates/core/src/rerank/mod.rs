//! Post-hoc diversifiers over a base model's candidate pool.

mod io;

pub use io::{read_ranked, write_ranked, RankedRow};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("DPP kernel is not positive semidefinite: minimum eigenvalue {0:e}")]
    NotPsd(f64),
    #[error("invalid re-ranker parameter: {0}")]
    BadParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RerankError>;

/// One item of a user's candidate pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub item: usize,
    pub relevance: f64,
    /// Soft category target of the item.
    pub target: Vec<f64>,
}

/// Cosine similarity of two category targets; zero when either is zero.
pub fn category_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // One square root of the product: identical targets give exactly 1.
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

/// Symmetric `n × n` similarity matrix with unit diagonal, row-major.
pub fn similarity_matrix(cands: &[Candidate]) -> Vec<f64> {
    let n = cands.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        s[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = category_similarity(&cands[i].target, &cands[j].target);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

fn prefer(score: f64, item: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bs, bi)) => score > bs || (score == bs && item < bi),
    }
}

/// MMR scores within this relative distance of the best are tied.
pub const MMR_TIE_TOLERANCE: f64 = 1e-12;

/// Maximal marginal relevance: greedily picks the candidate maximizing
/// `θ·rel − (1−θ)·max_{selected} sim`. The first pick is the most relevant
/// item; ties go to the lower item index. Returns item indices.
pub fn mmr_rerank(cands: &[Candidate], k: usize, theta: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(RerankError::BadParameter(format!("MMR theta {theta} outside [0, 1]")));
    }
    let n = cands.len();
    let k = k.min(n);
    let sim = similarity_matrix(cands);
    let mut taken = vec![false; n];
    let mut max_sim = vec![0.0f64; n];
    let mut out = Vec::with_capacity(k);
    for step in 0..k {
        let scores: Vec<(usize, f64)> = (0..n)
            .filter(|&i| !taken[i])
            .map(|i| {
                let s = if step == 0 {
                    cands[i].relevance
                } else {
                    theta * cands[i].relevance - (1.0 - theta) * max_sim[i]
                };
                (i, s)
            })
            .collect();
        // Scores that agree up to rounding are ties: θ·rel and the similarity
        // penalty take few distinct values, so exact ties in real arithmetic
        // are common and must not be decided by the last bit.
        let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let floor = top - MMR_TIE_TOLERANCE * top.abs().max(1.0);
        let pick = scores
            .iter()
            .filter(|s| s.1 >= floor)
            .min_by_key(|s| cands[s.0].item)
            .map(|s| s.0)
            .expect("a candidate remains");
        taken[pick] = true;
        out.push(cands[pick].item);
        for i in 0..n {
            max_sim[i] = max_sim[i].max(sim[pick * n + i]);
        }
    }
    Ok(out)
}

/// Result of greedy DPP selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppSelection {
    /// Selected items, in pick order.
    pub items: Vec<usize>,
    /// Log-determinant gain of each pick.
    pub log_gains: Vec<f64>,
    /// Whether selection stopped because no candidate had positive gain.
    pub stopped_early: bool,
}

/// Marginal gains at or below this fraction of the largest diagonal entry
/// count as zero.
pub const DPP_GAIN_FLOOR: f64 = 1e-10;
/// Relative tolerance for negative pivots before the kernel is checked.
pub const DPP_PSD_TOLERANCE: f64 = 1e-8;

fn min_eigenvalue(kernel: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, kernel);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fast greedy MAP over a kernel `L` (row-major `n × n`) by incremental
/// Cholesky updates. `items[i]` breaks ties toward the lower index.
pub fn dpp_greedy(kernel: &[f64], items: &[usize], k: usize) -> Result<DppSelection> {
    let n = items.len();
    assert_eq!(kernel.len(), n * n, "kernel must be n × n");
    let k = k.min(n);
    let scale = (0..n).map(|i| kernel[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut d2: Vec<f64> = (0..n).map(|i| kernel[i * n + i]).collect();
    // Row i holds the Cholesky coefficients of candidate i against the picks.
    let mut c: Vec<Vec<f64>> = vec![Vec::with_capacity(k); n];
    let mut taken = vec![false; n];
    let mut sel = DppSelection {
        items: Vec::with_capacity(k),
        log_gains: Vec::with_capacity(k),
        stopped_early: false,
    };
    let mut checked = false;
    while sel.items.len() < k {
        if !checked && d2.iter().any(|&v| v < -DPP_PSD_TOLERANCE * scale) {
            let min = min_eigenvalue(kernel, n);
            if min < -DPP_PSD_TOLERANCE * scale {
                return Err(RerankError::NotPsd(min));
            }
            checked = true;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut j = usize::MAX;
        for i in (0..n).filter(|&i| !taken[i]) {
            if prefer(d2[i], items[i], best) {
                best = Some((d2[i], items[i]));
                j = i;
            }
        }
        let Some((dj2, _)) = best else { break };
        if dj2 <= DPP_GAIN_FLOOR * scale {
            sel.stopped_early = true;
            break;
        }
        taken[j] = true;
        sel.items.push(items[j]);
        sel.log_gains.push(dj2.ln());
        let dj = dj2.sqrt();
        let cj = c[j].clone();
        for i in (0..n).filter(|&i| !taken[i]) {
            let dot: f64 = cj.iter().zip(&c[i]).map(|(a, b)| a * b).sum();
            let e = (kernel[j * n + i] - dot) / dj;
            c[i].push(e);
            d2[i] -= e * e;
        }
    }
    Ok(sel)
}

/// Quality-weighted kernel `Diag(q)·S·Diag(q)` with
/// `q_i = exp(θ/(2(1−θ))·rel_i)`.
pub fn dpp_kernel(cands: &[Candidate], theta: f64) -> Result<Vec<f64>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(RerankError::BadParameter(format!("DPP theta {theta} outside (0, 1)")));
    }
    let n = cands.len();
    let alpha = theta / (2.0 * (1.0 - theta));
    let q: Vec<f64> = cands.iter().map(|c| (alpha * c.relevance).exp()).collect();
    let mut l = similarity_matrix(cands);
    for i in 0..n {
        for j in 0..n {
            l[i * n + j] *= q[i] * q[j];
        }
    }
    Ok(l)
}

/// Greedy DPP re-ranking to `k` items. When the kernel's rank runs out
/// before `k` picks, the remaining slots follow the base relevance order.
pub fn dpp_rerank(cands: &[Candidate], k: usize, theta: f64) -> Result<Vec<usize>> {
    let kernel = dpp_kernel(cands, theta)?;
    let items: Vec<usize> = cands.iter().map(|c| c.item).collect();
    let sel = dpp_greedy(&kernel, &items, k)?;
    let mut out = sel.items;
    if out.len() < k.min(cands.len()) {
        for item in relevance_order(cands) {
            if out.len() == k.min(cands.len()) {
                break;
            }
            if !out.contains(&item) {
                out.push(item);
            }
        }
    }
    Ok(out)
}

/// Items by relevance descending, ties by lower item index.
pub fn relevance_order(cands: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<&Candidate> = cands.iter().collect();
    order.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then(a.item.cmp(&b.item)));
    order.into_iter().map(|c| c.item).collect()
}

/// A configured diversifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Reranker {
    Mmr { theta: f64 },
    Dpp { theta: f64 },
}

impl Reranker {
    pub fn name(&self) -> &'static str {
        match self {
            Reranker::Mmr { .. } => "mmr",
            Reranker::Dpp { .. } => "dpp",
        }
    }

    pub fn rerank(&self, cands: &[Candidate], k: usize) -> Result<Vec<usize>> {
        match *self {
            Reranker::Mmr { theta } => mmr_rerank(cands, k, theta),
            Reranker::Dpp { theta } => dpp_rerank(cands, k, theta),
        }
    }
}
