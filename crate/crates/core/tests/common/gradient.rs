//! Tape gradients against central finite differences of an independently
//! written forward pass.
//!
//! A tape with stop-grad and GRL nodes does not differentiate any single
//! scalar function, so the oracle differentiates a surrogate that agrees with
//! the tape's gradient field at the expansion point θ0:
//! `stop_grad(x(θ))` becomes the constant `x(θ0)` and `grl(x(θ))` becomes
//! `2·x(θ0) − x(θ)`. Both surrogates have the forward value `x(θ0)` at θ0.

use std::time::Instant;

use dcrs::ingest::Catalog;
use dcrs::models::{Batch, Model, ModelConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-3;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn soft_xent(logits: &[f64], t: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().zip(t).map(|(l, t)| -t * (l - lse)).sum()
}

fn param<'a>(model: &'a Model, name: &str) -> &'a [f64] {
    &model.store.by_name(name).unwrap().value
}

/// Per-example representation `h` (after the dropout mask) and the summed
/// squares of the weighted embedding rows.
fn representations(model: &Model, batch: &Batch) -> (Vec<Vec<f64>>, f64) {
    let width = model.config.width();
    let emb = param(model, "embedding");
    let (rows, weights, fields) = model.features.gather(&batch.pairs);
    let mut out = Vec::new();
    let mut sq = 0.0;
    for b in 0..batch.len() {
        let mut sum = vec![0.0; width];
        let mut sum_sq = vec![0.0; width];
        for f in 0..fields {
            let r = rows[b * fields + f];
            let w = weights[b * fields + f];
            for j in 0..width {
                let v = w * emb[r * width + j];
                sum[j] += v;
                sum_sq[j] += v * v;
                sq += v * v;
            }
        }
        let mut h: Vec<f64> = (0..width).map(|j| 0.5 * (sum[j] * sum[j] - sum_sq[j])).collect();
        if let Some(mask) = &batch.dropout_mask {
            for j in 0..width {
                h[j] *= mask[b * width + j];
            }
        }
        out.push(h);
    }
    (out, sq)
}

fn rec_mean(ps: &[f64], batch: &Batch) -> f64 {
    let n = ps.len() as f64;
    ps.iter()
        .enumerate()
        .map(|(b, &p)| {
            let w = batch.sample_weights.as_ref().map_or(1.0, |w| w[b]);
            w * bce(p, batch.labels[b])
        })
        .sum::<f64>()
        / n
}

/// Surrogate loss; `anchor` holds h⊥(θ0) per example for DCRS.
fn surrogate(model: &Model, batch: &Batch, anchor: &[Vec<f64>]) -> f64 {
    let cfg = &model.config;
    let d = cfg.dim;
    let n = batch.len() as f64;
    let (hs, sq) = representations(model, batch);
    let mut total = if cfg.kind == ModelKind::Dcrs {
        let k = model.n_categories;
        let w1 = param(model, "w1");
        let w2 = param(model, "w2");
        let dw = param(model, "disc_w");
        let db = param(model, "disc_b");
        let logits = |x: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|c| db[c] + (0..d).map(|j| x[j] * dw[j * k + c]).sum::<f64>())
                .collect()
        };
        let mut p = Vec::new();
        let mut p_perp = Vec::new();
        let mut disc_c = 0.0;
        let mut disc_perp = 0.0;
        for (b, h) in hs.iter().enumerate() {
            let (h_perp, h_c) = h.split_at(d);
            let frozen = &anchor[b];
            p_perp.push(sigmoid((0..d).map(|j| h_perp[j] * w1[j]).sum()));
            let z: f64 = (0..d).map(|j| frozen[j] * w2[j] + h_c[j] * w2[d + j]).sum();
            p.push(sigmoid(z));
            let t = model.item_target(batch.pairs[b].1);
            disc_c += soft_xent(&logits(h_c), t);
            let reversed: Vec<f64> = (0..d).map(|j| 2.0 * frozen[j] - h_perp[j]).collect();
            disc_perp += soft_xent(&logits(&reversed), t);
        }
        rec_mean(&p, batch) + rec_mean(&p_perp, batch) + cfg.lambda * (disc_c / n + disc_perp / n)
    } else {
        let w = param(model, "w");
        let p: Vec<f64> = hs
            .iter()
            .map(|h| sigmoid((0..d).map(|j| h[j] * w[j]).sum()))
            .collect();
        rec_mean(&p, batch)
    };
    if cfg.l2 > 0.0 {
        total += cfg.l2 / n * sq;
    }
    total
}

struct Instance {
    model: Model,
    batch: Batch,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(1..=5);
    let n_users = rng.random_range(2..=5);
    let n_items = rng.random_range(2..=6);
    let item_categories: Vec<Vec<usize>> = (0..n_items)
        .map(|_| {
            let mut cs: Vec<usize> = (0..rng.random_range(1..=k.min(3))).map(|_| rng.random_range(0..k)).collect();
            cs.sort_unstable();
            cs.dedup();
            cs
        })
        .collect();
    let side = rng.random_bool(0.5);
    let catalog = Catalog {
        user_ids: (0..n_users).map(|u| format!("u{u}")).collect(),
        item_ids: (0..n_items).map(|i| format!("i{i}")).collect(),
        category_names: (0..k).map(|c| format!("c{c}")).collect(),
        item_category_weights: vec![None; n_items],
        user_feature_names: if side { vec!["f0".into(), "f1".into()] } else { Vec::new() },
        user_features: if side {
            (0..n_users).map(|u| vec![u % 2]).collect()
        } else {
            Vec::new()
        },
        item_categories,
        ..Catalog::default()
    };
    let kind = match rng.random_range(0..4) {
        0 => ModelKind::Nfm,
        1 => ModelKind::Ips,
        2 => ModelKind::Unawareness,
        _ => ModelKind::Dcrs,
    };
    // DCRS twice as likely: it carries the GRL and stop-grad paths.
    let kind = if rng.random_bool(0.5) { ModelKind::Dcrs } else { kind };
    let config = ModelConfig {
        kind,
        dim: rng.random_range(1..=8),
        lambda: rng.random_range(0.0..1.0),
        l2: if rng.random_bool(0.5) { rng.random_range(0.0..0.1) } else { 0.0 },
        init_std: 0.5,
        ..ModelConfig::default()
    };
    let width = config.width();
    let model = Model::new(config, &catalog, rng.random()).unwrap();
    let b = rng.random_range(1..=16);
    let pairs: Vec<(usize, usize)> = (0..b)
        .map(|_| (rng.random_range(0..n_users), rng.random_range(0..n_items)))
        .collect();
    let labels = (0..b).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let sample_weights = rng
        .random_bool(0.3)
        .then(|| (0..b).map(|_| rng.random_range(0.5..3.0)).collect());
    let dropout_mask = rng.random_bool(0.3).then(|| {
        (0..b * width)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { 1.0 / 0.7 })
            .collect()
    });
    Instance {
        model,
        batch: Batch {
            pairs,
            labels,
            sample_weights,
            dropout_mask,
        },
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Outcome of a gradient check run.
pub struct GradReport {
    pub instances: usize,
    pub dcrs_instances: usize,
    pub scalars: usize,
    pub worst: f64,
    pub seconds: f64,
}

/// Checks every parameter gradient of `instances` random models; panics
/// on the first disagreement.
pub fn check_gradients(instances: usize, seed: u64) -> GradReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut dcrs_instances = 0;
    for instance in 0..instances {
        let Instance { mut model, batch } = random_instance(&mut rng);
        let out = model.forward(&batch).unwrap();
        let d = model.config.dim;
        let anchor: Vec<Vec<f64>> = representations(&model, &batch)
            .0
            .into_iter()
            .map(|h| h[..d].to_vec())
            .collect();
        let tape_total = out.tape.value(out.total).item();
        let oracle_total = surrogate(&model, &batch, &anchor);
        assert!(
            (tape_total - oracle_total).abs() < 1e-10,
            "instance {instance}: forward {tape_total} vs oracle {oracle_total}"
        );
        let mut store = model.store.clone();
        store.zero_grad();
        out.tape.backward(out.total, &mut store).unwrap();
        if model.kind() == ModelKind::Dcrs {
            dcrs_instances += 1;
        }
        let names: Vec<String> = model.store.params().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let analytic = store.by_name(&name).unwrap().grad.clone();
            let id = model.store.id(&name).unwrap();
            for (j, &tape) in analytic.iter().enumerate() {
                let orig = model.store.get(id).value[j];
                model.store.get_mut(id).value[j] = orig + EPS;
                let up = surrogate(&model, &batch, &anchor);
                model.store.get_mut(id).value[j] = orig - EPS;
                let down = surrogate(&model, &batch, &anchor);
                model.store.get_mut(id).value[j] = orig;
                let fd = (up - down) / (2.0 * EPS);
                let e = rel_err(tape, fd);
                assert!(
                    e < TOL,
                    "instance {instance} ({:?}), {name}[{j}]: tape {} vs fd {fd} (rel {e:.2e})",
                    model.kind(),
                    tape
                );
                worst = worst.max(e);
                checked += 1;
            }
        }
    }
    GradReport {
        instances,
        dcrs_instances,
        scalars: checked,
        worst,
        seconds: start.elapsed().as_secs_f64(),
    }
}
