//! Stop-gradient and gradient-reversal contracts of the disentangled model.

use dcrs::graph::ParamStore;
use dcrs::ingest::{Catalog, Interaction};
use dcrs::models::{Batch, ForwardOutput, Model, ModelConfig, ModelKind};

const EPS: f64 = 1e-5;

fn catalog() -> Catalog {
    Catalog {
        user_ids: (0..4).map(|u| format!("u{u}")).collect(),
        item_ids: (0..6).map(|i| format!("i{i}")).collect(),
        category_names: vec!["a".into(), "b".into(), "c".into()],
        item_categories: vec![vec![0], vec![1], vec![0, 2], vec![2], vec![1, 2], vec![0]],
        item_category_weights: vec![None; 6],
        ..Catalog::default()
    }
}

fn model(lambda: f64) -> (Model, Batch) {
    let m = Model::new(
        ModelConfig {
            kind: ModelKind::Dcrs,
            dim: 4,
            lambda,
            init_std: 0.6,
            ..ModelConfig::default()
        },
        &catalog(),
        17,
    )
    .unwrap();
    let rows: Vec<Interaction> = (0..10)
        .map(|k| Interaction::new(k % 4, (k * 5) % 6, (k % 3 == 0) as u8, 0))
        .collect();
    (m, Batch::from_interactions(&rows))
}

fn soft_xent(logits: &[f64], t: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().zip(t).map(|(l, t)| -t * (l - lse)).sum()
}

/// `L_D` of the shared discriminator on a `[B, d]` representation.
fn disc_loss(m: &Model, batch: &Batch, x: &[f64], w: &[f64], bias: &[f64]) -> f64 {
    let d = m.config.dim;
    let k = m.n_categories;
    let mut s = 0.0;
    for (b, &(_, item)) in batch.pairs.iter().enumerate() {
        let logits: Vec<f64> = (0..k)
            .map(|c| bias[c] + (0..d).map(|j| x[b * d + j] * w[j * k + c]).sum::<f64>())
            .collect();
        s += soft_xent(&logits, m.item_target(item));
    }
    s / batch.len() as f64
}

fn grads(m: &Model, out: &ForwardOutput, loss: dcrs::graph::NodeId) -> (dcrs::graph::Gradients, ParamStore) {
    let mut store = m.store.clone();
    store.zero_grad();
    let g = out.tape.backward(loss, &mut store).unwrap();
    (g, store)
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(EPS) - f(-EPS)) / (2.0 * EPS)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()))
}

pub fn main_head_loss_sends_exactly_zero_gradient_into_h_perp() {
    let (m, batch) = model(0.3);
    let out = m.forward(&batch).unwrap();
    let (g, _) = grads(&m, &out, out.nodes.rec);
    let h_perp = out.nodes.h_perp.unwrap();
    assert!(g.get_or_zero(&out.tape, h_perp).iter().all(|&v| v == 0.0));
    let d = m.config.dim;
    let h = g.get_or_zero(&out.tape, out.nodes.h);
    let mut category_side = 0.0;
    for b in 0..batch.len() {
        assert!(h[b * 2 * d..b * 2 * d + d].iter().all(|&v| v == 0.0));
        category_side += h[b * 2 * d + d..(b + 1) * 2 * d].iter().map(|v| v.abs()).sum::<f64>();
    }
    assert!(category_side > 0.0, "h^C should still receive the main-head gradient");
}

pub fn grl_flips_representation_gradient_but_not_discriminator_gradient() {
    let (m, batch) = model(0.3);
    let out = m.forward(&batch).unwrap();
    let h_perp = out.nodes.h_perp.unwrap();
    let disc_perp = out.nodes.disc_perp.unwrap();
    let (g, store) = grads(&m, &out, disc_perp);
    let x = out.tape.value(h_perp).data().to_vec();
    let w = m.store.by_name("disc_w").unwrap().value.clone();
    let bias = m.store.by_name("disc_b").unwrap().value.clone();
    assert!((disc_loss(&m, &batch, &x, &w, &bias) - out.terms.disc_perp).abs() < 1e-12);

    // Representation side: reversed.
    let tape_h = g.get_or_zero(&out.tape, h_perp);
    for j in 0..x.len() {
        let fd = central(|e| {
            let mut x2 = x.clone();
            x2[j] += e;
            disc_loss(&m, &batch, &x2, &w, &bias)
        });
        assert!(close(tape_h[j], -fd), "h_perp[{j}]: tape {} vs -fd {}", tape_h[j], -fd);
    }
    // Discriminator side: ordinary descent direction.
    let tape_w = &store.by_name("disc_w").unwrap().grad;
    for j in 0..w.len() {
        let fd = central(|e| {
            let mut w2 = w.clone();
            w2[j] += e;
            disc_loss(&m, &batch, &x, &w2, &bias)
        });
        assert!(close(tape_w[j], fd), "disc_w[{j}]: tape {} vs fd {fd}", tape_w[j]);
    }
    let tape_b = &store.by_name("disc_b").unwrap().grad;
    for j in 0..bias.len() {
        let fd = central(|e| {
            let mut b2 = bias.clone();
            b2[j] += e;
            disc_loss(&m, &batch, &x, &w, &b2)
        });
        assert!(close(tape_b[j], fd));
    }
}

pub fn total_loss_pushes_h_perp_up_the_discriminator_loss() {
    let lambda = 0.7;
    let (m, batch) = model(lambda);
    let out = m.forward(&batch).unwrap();
    let h_perp = out.nodes.h_perp.unwrap();
    let (total, store_total) = grads(&m, &out, out.total);
    let (rec_perp, _) = grads(&m, &out, out.nodes.rec_perp.unwrap());
    let (disc_c, store_c) = grads(&m, &out, out.nodes.disc_c.unwrap());
    let (_, store_perp) = grads(&m, &out, out.nodes.disc_perp.unwrap());

    let x = out.tape.value(h_perp).data().to_vec();
    let w = m.store.by_name("disc_w").unwrap().value.clone();
    let bias = m.store.by_name("disc_b").unwrap().value.clone();
    let gt = total.get_or_zero(&out.tape, h_perp);
    let gr = rec_perp.get_or_zero(&out.tape, h_perp);
    // L_rec(p̂) and L_D^C do not reach h⊥.
    assert!(disc_c.get_or_zero(&out.tape, h_perp).iter().all(|&v| v == 0.0));
    for j in 0..x.len() {
        let fd = central(|e| {
            let mut x2 = x.clone();
            x2[j] += e;
            disc_loss(&m, &batch, &x2, &w, &bias)
        });
        let through_disc = gt[j] - gr[j];
        assert!(close(through_disc, -lambda * fd), "h_perp[{j}]: {through_disc} vs {}", -lambda * fd);
    }
    // The discriminator descends on both of its losses.
    let wt = &store_total.by_name("disc_w").unwrap().grad;
    let wc = &store_c.by_name("disc_w").unwrap().grad;
    let wp = &store_perp.by_name("disc_w").unwrap().grad;
    for j in 0..w.len() {
        assert!(close(wt[j], lambda * (wc[j] + wp[j])));
    }
    let recorded = out.tape.value(out.total).item();
    let expected = out.terms.rec + out.terms.rec_perp + lambda * (out.terms.disc_c + out.terms.disc_perp);
    assert!((recorded - expected).abs() < 1e-12, "recorded value carries +L_D^perp");
}
