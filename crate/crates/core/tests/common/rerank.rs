//! MMR and greedy DPP against exhaustive recomputation.
//!
//! Near-ties (within a tight tolerance of the best score) are resolved by the
//! documented rule, lower item index first, so float noise in the oracle's
//! own arithmetic cannot flip an otherwise exact tie.

use dcrs::rerank::{dpp_greedy, dpp_kernel, dpp_rerank, mmr_rerank, relevance_order, Candidate, DPP_GAIN_FLOOR};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIALS: usize = 1000;

fn random_pool(rng: &mut ChaCha8Rng) -> (Vec<Candidate>, Vec<Vec<usize>>) {
    let n = rng.random_range(1..=12);
    let k = rng.random_range(1..=5);
    let mut ids: Vec<usize> = (0..60).collect();
    ids.shuffle(rng);
    let mut sets = Vec::new();
    let cands = (0..n)
        .map(|x| {
            let mut s: Vec<usize> = (0..rng.random_range(1..=k.min(2))).map(|_| rng.random_range(0..k)).collect();
            s.sort_unstable();
            s.dedup();
            let mut target = vec![0.0; k];
            for &c in &s {
                target[c] = 1.0 / s.len() as f64;
            }
            sets.push(s);
            // Coarse relevance levels make exact ties common.
            Candidate {
                item: ids[x],
                relevance: rng.random_range(0..8) as f64 / 8.0,
                target,
            }
        })
        .collect();
    (cands, sets)
}

/// Cosine of two uniform category sets: |a ∩ b| / sqrt(|a|·|b|).
fn set_cosine(a: &[usize], b: &[usize]) -> f64 {
    let common = a.iter().filter(|c| b.contains(c)).count() as f64;
    common / ((a.len() * b.len()) as f64).sqrt()
}

/// Index of the candidate the tie rule selects among near-best scores.
fn tie_pick(scores: &[(usize, f64)], cands: &[Candidate], tol: f64) -> usize {
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .filter(|s| s.1 >= best - tol)
        .min_by_key(|s| cands[s.0].item)
        .unwrap()
        .0
}

fn mmr_oracle(cands: &[Candidate], sets: &[Vec<usize>], k: usize, theta: f64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k.min(cands.len()) {
        let scores: Vec<(usize, f64)> = (0..cands.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let s = if chosen.is_empty() {
                    cands[i].relevance
                } else {
                    let penalty = chosen.iter().map(|&j| set_cosine(&sets[i], &sets[j])).fold(0.0, f64::max);
                    theta * cands[i].relevance - (1.0 - theta) * penalty
                };
                (i, s)
            })
            .collect();
        chosen.push(tie_pick(&scores, cands, 1e-12));
    }
    chosen.into_iter().map(|i| cands[i].item).collect()
}

fn log_det(kernel: &[f64], n: usize, subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let m = DMatrix::from_fn(subset.len(), subset.len(), |a, b| kernel[subset[a] * n + subset[b]]);
    m.determinant().ln()
}

pub fn mmr_matches_exhaustive_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut with_ties = 0;
    for trial in 0..TRIALS {
        let (cands, sets) = random_pool(&mut rng);
        let k = rng.random_range(1..=cands.len());
        let theta = [0.0, 0.3, 0.5, 0.8, 1.0][trial % 5];
        let got = mmr_rerank(&cands, k, theta).unwrap();
        assert_eq!(got, mmr_oracle(&cands, &sets, k, theta), "trial {trial}, theta {theta}");
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(mmr_rerank(&shuffled, k, theta).unwrap(), got, "trial {trial}: input order changed output");
        let rels: Vec<f64> = cands.iter().map(|c| c.relevance).collect();
        if (1..rels.len()).any(|i| rels[..i].contains(&rels[i])) {
            with_ties += 1;
        }
        if theta == 1.0 {
            assert_eq!(got, relevance_order(&cands)[..k].to_vec());
        }
    }
    assert!(with_ties > TRIALS / 4, "instances should exercise tie-breaking");
}

pub fn dpp_matches_exhaustive_greedy_and_direct_determinants() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_gain_err = 0.0f64;
    let mut early = 0;
    for trial in 0..TRIALS {
        let (cands, _) = random_pool(&mut rng);
        let n = cands.len();
        let k = rng.random_range(1..=n);
        let theta = rng.random_range(0.1..0.9);
        let kernel = dpp_kernel(&cands, theta).unwrap();
        let items: Vec<usize> = cands.iter().map(|c| c.item).collect();
        let sel = dpp_greedy(&kernel, &items, k).unwrap();
        let scale = (0..n).map(|i| kernel[i * n + i]).fold(0.0, f64::max);

        // Replay the selection against determinant ratios of every option.
        let mut chosen: Vec<usize> = Vec::new();
        let mut base = 0.0;
        for (step, &item) in sel.items.iter().enumerate() {
            let gains: Vec<(usize, f64)> = (0..n)
                .filter(|i| !chosen.contains(i))
                .map(|i| {
                    let mut s = chosen.clone();
                    s.push(i);
                    let ld = log_det(&kernel, n, &s);
                    (i, if ld.is_finite() { (ld - base).exp() } else { 0.0 })
                })
                .collect();
            let pick = tie_pick(&gains, &cands, 1e-9 * scale);
            assert_eq!(cands[pick].item, item, "trial {trial}, step {step}");
            chosen.push(pick);
            let ld = log_det(&kernel, n, &chosen);
            let err = (sel.log_gains[step] - (ld - base)).abs();
            assert!(err < 1e-8, "trial {trial}, step {step}: log gain {} vs direct {}", sel.log_gains[step], ld - base);
            worst_gain_err = worst_gain_err.max(err);
            base = ld;
        }
        if sel.items.len() < k {
            assert!(sel.stopped_early);
            early += 1;
            // No remaining candidate adds volume.
            for i in (0..n).filter(|i| !chosen.contains(i)) {
                let mut s = chosen.clone();
                s.push(i);
                let m = DMatrix::from_fn(s.len(), s.len(), |a, b| kernel[s[a] * n + s[b]]);
                let ratio = m.determinant() / base.exp();
                assert!(ratio <= DPP_GAIN_FLOOR * scale + 1e-9 * scale, "trial {trial}: item {i} still has gain {ratio}");
            }
            // The public re-ranker fills the rest by relevance.
            let full = dpp_rerank(&cands, k, theta).unwrap();
            assert_eq!(full.len(), k);
            assert_eq!(&full[..sel.items.len()], &sel.items[..]);
        }
    }
    assert!(early > 0, "rank-deficient pools should occur");
    println!("dpp: worst log-gain error {worst_gain_err:.2e}, {early} early stops");
}

pub fn dpp_with_identity_similarity_follows_relevance() {
    let cands: Vec<Candidate> = (0..6)
        .map(|i| {
            let mut target = vec![0.0; 6];
            target[i] = 1.0;
            Candidate {
                item: 10 + i,
                relevance: [0.3, 0.9, 0.1, 0.5, 0.7, 0.2][i],
                target,
            }
        })
        .collect();
    assert_eq!(dpp_rerank(&cands, 6, 0.6).unwrap(), relevance_order(&cands));
}

