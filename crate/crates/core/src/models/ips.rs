use std::collections::HashMap;

use log::debug;

use crate::ingest::Interaction;

/// Per-example inverse-propensity weights.
///
/// A user's category frequency `freq_u` is the normalized sum of the soft
/// targets of their positive interactions in `history`. The propensity of
/// `(u, i)` is `Σ_c t̃_i[c]·freq_u[c]` and the weight is
/// `1 / max(propensity, clip)`. Users with no positive history get weight 1.
/// `targets` is row-major `[M, K]`.
pub fn ips_weights(examples: &[Interaction], history: &[Interaction], targets: &[f64], k: usize, clip: f64) -> Vec<f64> {
    let mut freq: HashMap<usize, Vec<f64>> = HashMap::new();
    for x in history.iter().filter(|x| x.is_positive()) {
        let f = freq.entry(x.user).or_insert_with(|| vec![0.0; k]);
        for (a, t) in f.iter_mut().zip(&targets[x.item * k..(x.item + 1) * k]) {
            *a += t;
        }
    }
    for f in freq.values_mut() {
        let total: f64 = f.iter().sum();
        f.iter_mut().for_each(|v| *v /= total);
    }
    let mut empty = 0usize;
    let w = examples
        .iter()
        .map(|x| match freq.get(&x.user) {
            Some(f) => {
                let t = &targets[x.item * k..(x.item + 1) * k];
                let propensity: f64 = t.iter().zip(f).map(|(a, b)| a * b).sum();
                1.0 / propensity.max(clip)
            }
            None => {
                empty += 1;
                1.0
            }
        })
        .collect();
    if empty > 0 {
        debug!("{empty} examples from users without positive history got IPS weight 1");
    }
    w
}
