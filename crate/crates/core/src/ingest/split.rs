use std::collections::HashMap;

use super::{
    Catalog, DatasetDescriptor, IngestError, Interaction, NegativePool, RawRating, Result,
    SplitDataset,
};

/// Encodes raw ratings against a catalog and labels `rating > threshold` as 1.
pub fn binarize(
    raw: &[RawRating],
    descriptor: &DatasetDescriptor,
    catalog: &Catalog,
) -> Result<Vec<Interaction>> {
    let DatasetDescriptor {
        rating_min: min,
        rating_max: max,
        threshold,
    } = *descriptor;
    if !(min..=max).contains(&threshold) {
        return Err(IngestError::ThresholdOutOfScale { threshold, min, max });
    }
    let users: HashMap<&str, usize> = catalog
        .user_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let items: HashMap<&str, usize> = catalog
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    raw.iter()
        .map(|r| {
            let user = *users
                .get(r.user_id.as_str())
                .ok_or_else(|| IngestError::UnknownId {
                    line: r.line,
                    kind: "user",
                    id: r.user_id.clone(),
                })?;
            let item = *items
                .get(r.item_id.as_str())
                .ok_or_else(|| IngestError::UnknownId {
                    line: r.line,
                    kind: "item",
                    id: r.item_id.clone(),
                })?;
            if !(min..=max).contains(&r.rating) {
                return Err(IngestError::RatingOutOfScale {
                    line: r.line,
                    rating: r.rating,
                    min,
                    max,
                });
            }
            Ok(Interaction::new(
                user,
                item,
                u8::from(r.rating > threshold),
                r.timestamp,
            ))
        })
        .collect()
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadRatios(ratios));
    }
    Ok(())
}

fn partition_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize) {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    (train, val)
}

/// Global chronological split: one stable sort by timestamp (ties keep input
/// order), then contiguous train/validation/test blocks.
pub fn chronological_split(data: &[Interaction], ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    check_ratios(ratios)?;
    if data.len() < 3 {
        return Err(IngestError::TooFewInteractions(data.len()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by_key(|x| x.timestamp);
    let (n_train, n_val) = partition_sizes(sorted.len(), ratios);
    let test = sorted.split_off(n_train + n_val);
    let validation = sorted.split_off(n_train);
    Ok(SplitDataset {
        train: sorted,
        validation,
        test,
        negatives: NegativePool {
            seed,
            ..NegativePool::default()
        },
        seed,
    })
}

/// Per-user chronological split: each user's own history is cut by ratio.
/// Partitions list users in first-appearance order.
pub fn per_user_split(data: &[Interaction], ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    check_ratios(ratios)?;
    if data.len() < 3 {
        return Err(IngestError::TooFewInteractions(data.len()));
    }
    let mut order = Vec::new();
    let mut by_user: HashMap<usize, Vec<Interaction>> = HashMap::new();
    for x in data {
        by_user
            .entry(x.user)
            .or_insert_with(|| {
                order.push(x.user);
                Vec::new()
            })
            .push(*x);
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for u in order {
        let mut h = by_user.remove(&u).unwrap_or_default();
        h.sort_by_key(|x| x.timestamp);
        let (n_train, n_val) = partition_sizes(h.len(), ratios);
        test.extend_from_slice(&h[n_train + n_val..]);
        validation.extend_from_slice(&h[n_train..n_train + n_val]);
        train.extend_from_slice(&h[..n_train]);
    }
    Ok(SplitDataset {
        train,
        validation,
        test,
        negatives: NegativePool {
            seed,
            ..NegativePool::default()
        },
        seed,
    })
}

/// Iteratively drops users and items with fewer than `k` interactions.
pub fn kcore_filter(data: &[Interaction], k: usize) -> Result<Vec<Interaction>> {
    if k == 0 {
        return Err(IngestError::BadK);
    }
    let mut cur = data.to_vec();
    loop {
        let mut du: HashMap<usize, usize> = HashMap::new();
        let mut di: HashMap<usize, usize> = HashMap::new();
        for x in &cur {
            *du.entry(x.user).or_default() += 1;
            *di.entry(x.item).or_default() += 1;
        }
        let before = cur.len();
        cur.retain(|x| du[&x.user] >= k && di[&x.item] >= k);
        if cur.len() == before {
            break;
        }
    }
    if cur.is_empty() {
        return Err(IngestError::KcoreEliminatesDataset);
    }
    Ok(cur)
}

/// Re-indexes users and items to those that still have interactions,
/// preserving relative order, and shrinks the catalog to match.
pub fn compact(data: &[Interaction], catalog: &Catalog) -> (Vec<Interaction>, Catalog) {
    let mut keep_u = vec![false; catalog.n_users()];
    let mut keep_i = vec![false; catalog.n_items()];
    for x in data {
        keep_u[x.user] = true;
        keep_i[x.item] = true;
    }
    let remap = |keep: &[bool]| {
        let mut next = 0;
        keep.iter()
            .map(|&k| {
                k.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect::<Vec<Option<usize>>>()
    };
    let (mu, mi) = (remap(&keep_u), remap(&keep_i));
    let mut out = catalog.clone();
    let pick = |v: &[String], keep: &[bool]| -> Vec<String> {
        v.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| s.clone()).collect()
    };
    out.user_ids = pick(&catalog.user_ids, &keep_u);
    out.item_ids = pick(&catalog.item_ids, &keep_i);
    let filt = |v: &[Vec<usize>], keep: &[bool]| -> Vec<Vec<usize>> {
        v.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| s.clone()).collect()
    };
    out.item_categories = filt(&catalog.item_categories, &keep_i);
    out.item_category_weights = catalog
        .item_category_weights
        .iter()
        .zip(&keep_i)
        .filter(|(_, &k)| k)
        .map(|(w, _)| w.clone())
        .collect();
    if !catalog.user_features.is_empty() {
        out.user_features = filt(&catalog.user_features, &keep_u);
    }
    if !catalog.item_features.is_empty() {
        out.item_features = filt(&catalog.item_features, &keep_i);
    }
    let data = data
        .iter()
        .map(|x| Interaction {
            user: mu[x.user].expect("kept user"),
            item: mi[x.item].expect("kept item"),
            ..*x
        })
        .collect();
    (data, out)
}
