use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureSchema, FeatureTable, ModelConfig, ModelError, ModelKind, Result, ScoringRule};
use crate::graph::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::ingest::{Catalog, Interaction};

#[derive(Clone, Copy, Debug)]
struct Ids {
    emb: ParamId,
    /// NFM-style projection `W`.
    w: Option<ParamId>,
    /// DCRS heads and discriminator.
    w1: Option<ParamId>,
    w2: Option<ParamId>,
    disc_w: Option<ParamId>,
    disc_b: Option<ParamId>,
}

/// A trainable model: parameters plus the feature layout they index.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub features: FeatureTable,
    pub store: ParamStore,
    /// Soft category target of every item, row-major `[M, K]`.
    pub targets: Vec<f64>,
    pub n_categories: usize,
    /// Users with at least one training interaction; others are cold-start.
    pub known_users: Vec<bool>,
    ids: Ids,
}

/// One minibatch of labelled pairs.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
    /// Per-example weights on the recommendation loss (IPS).
    pub sample_weights: Option<Vec<f64>>,
    /// Inverted-dropout mask over the representation, `[B, width]`.
    pub dropout_mask: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_interactions(rows: &[Interaction]) -> Self {
        Self {
            pairs: rows.iter().map(|x| (x.user, x.item)).collect(),
            labels: rows.iter().map(|x| x.label as f64).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Values of the individual loss terms for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    /// L_rec(p̂, y).
    pub rec: f64,
    /// L_rec(p̂⊥, y); zero for non-disentangled models.
    pub rec_perp: f64,
    /// Discriminator loss on h^C.
    pub disc_c: f64,
    /// Discriminator loss on h⊥ (recorded with its natural sign).
    pub disc_perp: f64,
    /// L2 penalty on the looked-up embeddings.
    pub l2: f64,
}

impl LossTerms {
    /// The model objective: `rec + rec⊥ − λ·disc⊥ + λ·disc^C` (+ L2).
    pub fn objective(&self, lambda: f64) -> f64 {
        self.rec + self.rec_perp - lambda * self.disc_perp + lambda * self.disc_c + self.l2
    }
}

/// Tape nodes of interest in one forward pass. DCRS-only nodes are `None`
/// for the other models.
#[derive(Clone, Copy, Debug)]
pub struct DcrsNodes {
    pub bag: NodeId,
    pub h: NodeId,
    pub p: NodeId,
    pub rec: NodeId,
    pub h_perp: Option<NodeId>,
    pub h_c: Option<NodeId>,
    pub p_perp: Option<NodeId>,
    pub rec_perp: Option<NodeId>,
    pub logits_c: Option<NodeId>,
    pub logits_perp: Option<NodeId>,
    pub disc_c: Option<NodeId>,
    pub disc_perp: Option<NodeId>,
    pub l2: Option<NodeId>,
}

pub struct ForwardOutput {
    pub tape: Tape,
    /// Scalar the optimizer differentiates. The h⊥ discriminator term enters
    /// with `+λ` through a gradient reverse layer.
    pub total: NodeId,
    pub nodes: DcrsNodes,
    pub terms: LossTerms,
}

impl ForwardOutput {
    pub fn p(&self) -> &[f64] {
        self.tape.value(self.nodes.p).data()
    }

    pub fn p_perp(&self) -> Option<&[f64]> {
        self.nodes.p_perp.map(|n| self.tape.value(n).data())
    }
}

/// Per-user and per-item partial sums for fast scoring.
///
/// With `s` the weighted embedding sum and `q` the bi-interaction of one
/// side alone, a pair's representation is `q_u + q_i + s_u ⊙ s_i`.
#[derive(Clone, Debug)]
pub struct PairCache {
    width: usize,
    user_s: Vec<f64>,
    user_q: Vec<f64>,
    item_s: Vec<f64>,
    item_q: Vec<f64>,
}

fn partial_sums(store: &ParamStore, emb: ParamId, bag: &[(usize, f64)], s: &mut [f64], q: &mut [f64]) {
    let table = store.get(emb);
    let mut sq = vec![0.0; s.len()];
    for &(r, x) in bag {
        for ((sk, qk), v) in s.iter_mut().zip(sq.iter_mut()).zip(table.row(r)) {
            let e = x * v;
            *sk += e;
            *qk += e * e;
        }
    }
    for ((qo, sk), qk) in q.iter_mut().zip(s.iter()).zip(&sq) {
        *qo = 0.5 * (sk * sk - qk);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, catalog: &Catalog, seed: u64) -> Result<Self> {
        config.validate()?;
        let schema = FeatureSchema::from_catalog(catalog, config.kind.uses_categories());
        let features = FeatureTable::new(catalog, schema);
        let mut targets = Vec::with_capacity(catalog.n_items() * catalog.n_categories());
        for t in catalog.targets(config.use_relevance)? {
            targets.extend_from_slice(t.as_slice());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width = config.width();
        let d = config.dim;
        let k = catalog.n_categories();
        let emb = store.add_normal("embedding", vec![schema.n_rows(), width], config.init_std, &mut rng)?;
        let mut ids = Ids {
            emb,
            w: None,
            w1: None,
            w2: None,
            disc_w: None,
            disc_b: None,
        };
        if config.kind.is_disentangled() {
            ids.w1 = Some(store.add_normal("w1", vec![d, 1], (1.0 / d as f64).sqrt(), &mut rng)?);
            ids.w2 = Some(store.add_normal("w2", vec![2 * d, 1], (1.0 / (2 * d) as f64).sqrt(), &mut rng)?);
            ids.disc_w = Some(store.add_normal("disc_w", vec![d, k], (1.0 / d as f64).sqrt(), &mut rng)?);
            ids.disc_b = Some(store.add("disc_b", Tensor::zeros(vec![1, k]))?);
        } else {
            ids.w = Some(store.add_normal("w", vec![d, 1], (1.0 / d as f64).sqrt(), &mut rng)?);
        }
        Ok(Self {
            config,
            features,
            store,
            targets,
            n_categories: k,
            known_users: vec![false; schema.n_users],
            ids,
        })
    }

    /// Rebuilds a model around a stored parameter set.
    pub fn from_store(config: ModelConfig, catalog: &Catalog, store: ParamStore, known_users: Vec<bool>) -> Result<Self> {
        let mut m = Self::new(config, catalog, 0)?;
        for p in m.store.params() {
            let q = store.by_name(&p.name)?;
            if q.shape != p.shape {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter `{}` has shape {:?}, model expects {:?}",
                    p.name, q.shape, p.shape
                )));
            }
        }
        if store.len() != m.store.len() {
            return Err(ModelError::Config("checkpoint has extra parameters".into()));
        }
        if known_users.len() != m.features.schema.n_users {
            return Err(ModelError::Config("known-user table does not match catalog".into()));
        }
        let ids = Ids {
            emb: store.id("embedding")?,
            w: store.id("w").ok(),
            w1: store.id("w1").ok(),
            w2: store.id("w2").ok(),
            disc_w: store.id("disc_w").ok(),
            disc_b: store.id("disc_b").ok(),
        };
        m.store = store;
        m.ids = ids;
        m.known_users = known_users;
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn schema(&self) -> FeatureSchema {
        self.features.schema
    }

    pub fn n_items(&self) -> usize {
        self.features.schema.n_items
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn embedding_id(&self) -> ParamId {
        self.ids.emb
    }

    /// `(w1, w2, disc_w, disc_b)` for DCRS models.
    pub fn dcrs_ids(&self) -> Option<(ParamId, ParamId, ParamId, ParamId)> {
        Some((self.ids.w1?, self.ids.w2?, self.ids.disc_w?, self.ids.disc_b?))
    }

    /// NFM projection for non-disentangled models.
    pub fn projection_id(&self) -> Option<ParamId> {
        self.ids.w
    }

    pub fn mark_known_users(&mut self, train: &[Interaction]) {
        for x in train {
            self.known_users[x.user] = true;
        }
    }

    /// Zeroes and freezes the h^C half of W2, cutting the category head out
    /// of p̂ (DCRS only).
    pub fn freeze_category_head(&mut self) {
        if let Some(w2) = self.ids.w2 {
            let d = self.config.dim;
            let p = self.store.get_mut(w2);
            p.value[d..].iter_mut().for_each(|v| *v = 0.0);
            self.store.freeze_entries(w2, d..2 * d);
        }
    }

    pub fn item_target(&self, item: usize) -> &[f64] {
        let k = self.n_categories;
        &self.targets[item * k..(item + 1) * k]
    }

    fn check_pairs(&self, pairs: &[(usize, usize)]) -> Result<()> {
        let s = self.features.schema;
        for &(u, i) in pairs {
            if u >= s.n_users {
                return Err(ModelError::Config(format!("user {u} out of range for {} users", s.n_users)));
            }
            if i >= s.n_items {
                return Err(ModelError::UnknownItem { item: i, n_items: s.n_items });
            }
        }
        Ok(())
    }

    /// Differentiable forward pass over a batch, recording every loss term.
    pub fn forward(&self, batch: &Batch) -> Result<ForwardOutput> {
        self.check_pairs(&batch.pairs)?;
        let b = batch.len();
        let cfg = &self.config;
        let mut tape = Tape::new();
        let (rows, weights, fields) = self.features.gather(&batch.pairs);
        let bag = tape.embed(&self.store, self.ids.emb, rows, weights, fields)?;
        let bi = tape.bi_interaction(bag)?;
        let h = match &batch.dropout_mask {
            Some(mask) => {
                let m = tape.input(Tensor::matrix(b, cfg.width(), mask.clone()));
                tape.mul(bi, m)?
            }
            None => bi,
        };
        let rec_of = |tape: &mut Tape, p: NodeId| -> Result<NodeId> {
            let xe = tape.binary_xent(p, &batch.labels)?;
            Ok(match &batch.sample_weights {
                Some(w) => tape.weighted_mean(xe, w)?,
                None => tape.mean(xe),
            })
        };
        let mut terms = LossTerms::default();
        let mut nodes = DcrsNodes {
            bag,
            h,
            p: h,
            rec: h,
            h_perp: None,
            h_c: None,
            p_perp: None,
            rec_perp: None,
            logits_c: None,
            logits_perp: None,
            disc_c: None,
            disc_perp: None,
            l2: None,
        };
        let mut total;
        if let Some((w1, w2, dw, db)) = self.dcrs_ids() {
            let d = cfg.dim;
            let h_perp = tape.slice(h, 0, d)?;
            let h_c = tape.slice(h, d, d)?;
            let w1n = tape.param(&self.store, w1);
            let z_perp = tape.affine(h_perp, w1n, None)?;
            let p_perp = tape.sigmoid(z_perp);
            let frozen = tape.stop_grad(h_perp);
            let joined = tape.concat(frozen, h_c)?;
            let w2n = tape.param(&self.store, w2);
            let z = tape.affine(joined, w2n, None)?;
            let p = tape.sigmoid(z);
            let rec = rec_of(&mut tape, p)?;
            let rec_perp = rec_of(&mut tape, p_perp)?;

            let k = self.n_categories;
            let mut t = Vec::with_capacity(b * k);
            for &(_, i) in &batch.pairs {
                t.extend_from_slice(self.item_target(i));
            }
            let dwn = tape.param(&self.store, dw);
            let dbn = tape.param(&self.store, db);
            let logits_c = tape.affine(h_c, dwn, Some(dbn))?;
            let reversed = tape.grl(h_perp);
            let logits_perp = tape.affine(reversed, dwn, Some(dbn))?;
            let xc = tape.soft_xent(logits_c, &t)?;
            let disc_c = tape.mean(xc);
            let xp = tape.soft_xent(logits_perp, &t)?;
            let disc_perp = tape.mean(xp);

            let sc = tape.scale(disc_c, cfg.lambda);
            let sp = tape.scale(disc_perp, cfg.lambda);
            total = tape.add(rec, rec_perp)?;
            total = tape.add(total, sc)?;
            total = tape.add(total, sp)?;

            terms.rec = tape.value(rec).item();
            terms.rec_perp = tape.value(rec_perp).item();
            terms.disc_c = tape.value(disc_c).item();
            terms.disc_perp = tape.value(disc_perp).item();
            nodes.p = p;
            nodes.rec = rec;
            nodes.h_perp = Some(h_perp);
            nodes.h_c = Some(h_c);
            nodes.p_perp = Some(p_perp);
            nodes.rec_perp = Some(rec_perp);
            nodes.logits_c = Some(logits_c);
            nodes.logits_perp = Some(logits_perp);
            nodes.disc_c = Some(disc_c);
            nodes.disc_perp = Some(disc_perp);
        } else {
            let w = self.ids.w.expect("projection present for non-disentangled models");
            let wn = tape.param(&self.store, w);
            let z = tape.affine(h, wn, None)?;
            let p = tape.sigmoid(z);
            let rec = rec_of(&mut tape, p)?;
            terms.rec = tape.value(rec).item();
            nodes.p = p;
            nodes.rec = rec;
            total = rec;
        }
        if cfg.l2 > 0.0 && b > 0 {
            let sq = tape.sum_squares(bag);
            let l2 = tape.scale(sq, cfg.l2 / b as f64);
            terms.l2 = tape.value(l2).item();
            total = tape.add(total, l2)?;
            nodes.l2 = Some(l2);
        }
        Ok(ForwardOutput {
            tape,
            total,
            nodes,
            terms,
        })
    }

    /// Partial sums of every user and item under the current parameters.
    pub fn cache(&self) -> PairCache {
        let w = self.config.width();
        let s = self.features.schema;
        let mut c = PairCache {
            width: w,
            user_s: vec![0.0; s.n_users * w],
            user_q: vec![0.0; s.n_users * w],
            item_s: vec![0.0; s.n_items * w],
            item_q: vec![0.0; s.n_items * w],
        };
        for (u, bag) in self.features.users.iter().enumerate() {
            let r = u * w..(u + 1) * w;
            let (ss, qq) = (&mut c.user_s[r.clone()], &mut c.user_q[r]);
            partial_sums(&self.store, self.ids.emb, bag, ss, qq);
        }
        for (i, bag) in self.features.items.iter().enumerate() {
            let r = i * w..(i + 1) * w;
            let (ss, qq) = (&mut c.item_s[r.clone()], &mut c.item_q[r]);
            partial_sums(&self.store, self.ids.emb, bag, ss, qq);
        }
        c
    }

    /// Representation `h` of a pair (2d wide for DCRS), without dropout.
    pub fn representation(&self, cache: &PairCache, user: usize, item: usize) -> Vec<f64> {
        let w = cache.width;
        let (us, uq) = (&cache.user_s[user * w..(user + 1) * w], &cache.user_q[user * w..(user + 1) * w]);
        let (is, iq) = (&cache.item_s[item * w..(item + 1) * w], &cache.item_q[item * w..(item + 1) * w]);
        (0..w).map(|k| uq[k] + iq[k] + us[k] * is[k]).collect()
    }

    fn head(&self, h: &[f64], rule: ScoringRule) -> f64 {
        let d = self.config.dim;
        match (self.dcrs_ids(), rule) {
            (Some((w1, _, _, _)), ScoringRule::CategoryIndependent) => {
                sigmoid(dot(&h[..d], &self.store.get(w1).value))
            }
            (Some((_, w2, _, _)), ScoringRule::Full) => sigmoid(dot(h, &self.store.get(w2).value)),
            (None, _) => sigmoid(dot(h, &self.store.get(self.ids.w.expect("projection")).value)),
        }
    }

    /// σ(W2[d:]ᵀ h^C): the category half of the DCRS head in isolation, a
    /// diagnostic only.
    pub fn category_head_score(&self, h: &[f64]) -> Option<f64> {
        let (_, w2, _, _) = self.dcrs_ids()?;
        let d = self.config.dim;
        Some(sigmoid(dot(&h[d..], &self.store.get(w2).value[d..])))
    }

    /// Scores `items` for `user`. Users without training interactions are
    /// rejected rather than scored.
    pub fn score_with(&self, cache: &PairCache, user: usize, items: &[usize], rule: ScoringRule) -> Result<Vec<f64>> {
        if !self.known_users.get(user).copied().unwrap_or(false) {
            return Err(ModelError::ColdStart(user));
        }
        items
            .iter()
            .map(|&i| {
                if i >= self.n_items() {
                    return Err(ModelError::UnknownItem { item: i, n_items: self.n_items() });
                }
                Ok(self.head(&self.representation(cache, user, i), rule))
            })
            .collect()
    }

    pub fn predict_for_ranking(&self, user: usize, items: &[usize], rule: ScoringRule) -> Result<Vec<f64>> {
        self.score_with(&self.cache(), user, items, rule)
    }
}
