use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Interaction, SplitDataset};

/// Items each user touched anywhere in the split, sorted.
pub(crate) fn observed_items(split: &SplitDataset) -> BTreeMap<usize, Vec<usize>> {
    let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for x in split.all() {
        seen.entry(x.user).or_default().push(x.item);
    }
    for v in seen.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    seen
}

fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Draws `ratio` negatives per positive of `partition`, rejecting any item in
/// the user's `seen` set. Returns only the new 0-labelled interactions, each
/// carrying the timestamp of the positive it was drawn for, in positive order.
pub fn sample_negatives_into(
    partition: &[Interaction],
    seen: &BTreeMap<usize, Vec<usize>>,
    n_items: usize,
    ratio: usize,
    seed: u64,
) -> Vec<Interaction> {
    if ratio == 0 {
        return Vec::new();
    }
    let mut positives: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, x) in partition.iter().enumerate() {
        if x.is_positive() {
            positives.entry(x.user).or_default().push(k);
        }
    }
    let empty = Vec::new();
    let drawn: Vec<(usize, Vec<usize>)> = positives
        .par_iter()
        .map(|(&user, rows)| {
            let seen_u = seen.get(&user).unwrap_or(&empty);
            if seen_u.len() >= n_items {
                warn!("user {user} interacted with every item; no negatives sampled");
                return (user, Vec::new());
            }
            let mut rng = user_rng(seed, user);
            let mut out = Vec::with_capacity(rows.len() * ratio);
            for _ in rows {
                for _ in 0..ratio {
                    loop {
                        let item = rng.random_range(0..n_items);
                        if seen_u.binary_search(&item).is_err() {
                            out.push(item);
                            break;
                        }
                    }
                }
            }
            (user, out)
        })
        .collect();
    let by_user: BTreeMap<usize, Vec<usize>> = drawn.into_iter().collect();
    let mut cursor: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for x in partition.iter().filter(|x| x.is_positive()) {
        let items = &by_user[&x.user];
        let at = cursor.entry(x.user).or_insert(0);
        for &item in items.iter().skip(*at).take(ratio) {
            out.push(Interaction::new(x.user, item, 0, x.timestamp));
        }
        *at += ratio;
    }
    out
}

/// Training partition augmented with `ratio` sampled negatives per positive.
/// Samples avoid everything the user interacted with in any partition.
pub fn sample_negatives(split: &SplitDataset, n_items: usize, ratio: usize, seed: u64) -> Vec<Interaction> {
    let seen = observed_items(split);
    let mut train = split.train.clone();
    train.extend(sample_negatives_into(&split.train, &seen, n_items, ratio, seed));
    train
}
