use std::f64::consts::{E, LN_2};

use dcrs::eval::{auc, coverage_at, entropy_at, ndcg_at, rank_items, recall_at, relaimpr, uauc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise count as an exact fraction `(2U, 2·P·N)`.
pub fn pairwise(scores: &[f64], labels: &[u8]) -> Option<(u128, u128)> {
    let mut twice_u = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for (a, &la) in labels.iter().enumerate() {
        if la == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if la != 1 {
            continue;
        }
        for (b, &lb) in labels.iter().enumerate() {
            if lb == 0 {
                twice_u += match scores[a].partial_cmp(&scores[b]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (p > 0 && n > 0).then_some((twice_u, 2 * p * n))
}

pub fn check_auc(scores: &[f64], labels: &[u8]) {
    match (auc(scores, labels), pairwise(scores, labels)) {
        (None, None) => {}
        (Some(a), Some((num, den))) => {
            assert_eq!(a, num as f64 / den as f64, "scores {scores:?} labels {labels:?}");
            // The rational is recovered exactly from the float when the
            // denominator is small.
            assert_eq!((a * den as f64).round() as u128, num);
        }
        (a, b) => panic!("class check disagrees: {a:?} vs {b:?}"),
    }
}

pub fn auc_matches_pairwise_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let n = rng.random_range(1..=50);
        // Coarse scores force plenty of ties.
        let levels = rng.random_range(1..=10);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        check_auc(&scores, &labels);
    }
}

pub fn uauc_is_the_mean_of_recomputed_user_aucs() {
    let rows = [
        (0, 0.9, 1),
        (0, 0.4, 0),
        (0, 0.5, 1),
        (1, 0.2, 1),
        (1, 0.3, 0),
        (1, 0.6, 1),
        (2, 0.7, 0),
        (2, 0.1, 1),
        (3, 0.8, 1),
    ];
    let mut per_user = Vec::new();
    for u in 0..4 {
        let s: Vec<f64> = rows.iter().filter(|r| r.0 == u).map(|r| r.1).collect();
        let y: Vec<u8> = rows.iter().filter(|r| r.0 == u).map(|r| r.2).collect();
        if let Some((num, den)) = pairwise(&s, &y) {
            per_user.push(num as f64 / den as f64);
        }
    }
    assert_eq!(per_user, vec![1.0, 0.5, 0.0]);
    assert_eq!(uauc(&rows).unwrap(), 0.5);
}

pub fn recall_and_ndcg_hand_table() {
    // Five items, positives {1, 3}, scores rank them 3, 0, 1, 4, 2.
    let items = [0, 1, 2, 3, 4];
    let scores = [0.8, 0.7, 0.1, 0.9, 0.3];
    let ranked = rank_items(&items, &scores);
    assert_eq!(ranked, vec![3, 0, 1, 4, 2]);
    let pos = [1, 3];
    let table = [
        (1, 0.5, 1.0),
        (2, 0.5, 0.6131471927654584),
        (3, 1.0, 0.9197207891481876),
        (5, 1.0, 0.9197207891481876),
    ];
    for (k, r, n) in table {
        assert_eq!(recall_at(&ranked, &pos, k), Some(r), "R@{k}");
        assert!((ndcg_at(&ranked, &pos, k).unwrap() - n).abs() < 1e-15, "NDCG@{k}");
    }
    assert_eq!(recall_at(&ranked, &[], 3), None);
}

pub fn coverage_and_entropy_hand_table() {
    // K = 3; item 2 belongs to categories 0 and 1.
    let cats = vec![vec![0], vec![1], vec![0, 1], vec![2], vec![0]];
    let targets = [
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.5, 0.5, 0.0, //
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0,
    ];
    let table: [(&[usize], usize, f64, f64); 4] = [
        (&[3, 0, 1, 4, 2], 3, 1.0986122886681098, 1.0),
        (&[3, 0, 1, 4, 2], 2, LN_2, 2.0 / 3.0),
        (&[0, 2, 4, 1, 3], 3, 0.45056120886630463, 2.0 / 3.0),
        (&[4, 0, 2, 1, 3], 2, 0.0, 1.0 / 3.0),
    ];
    for (ranked, k, ce, cc) in table {
        assert!((entropy_at(ranked, &targets, 3, k, E) - ce).abs() < 1e-15, "CE@{k} of {ranked:?}");
        assert_eq!(coverage_at(ranked, &cats, 3, k), cc, "CC@{k} of {ranked:?}");
    }
}

pub fn relative_improvement_reference_values() {
    assert_eq!(format!("{:.2}", relaimpr(0.8237, 0.8224).unwrap()), "0.40");
    assert_eq!(format!("{:.2}", relaimpr(0.8301, 0.8193).unwrap()), "3.38");
    assert_eq!(relaimpr(0.8, 0.8).unwrap(), 0.0);
}
