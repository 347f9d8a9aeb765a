use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ips_weights, Batch, LossTerms, Model, ModelConfig, ModelError, ModelKind, Result, ScoringRule};
use crate::eval::{mean_auc, user_aucs};
use crate::graph::{adagrad_step, binary_xent, GraphError, ParamStore};
use crate::ingest::{Catalog, Interaction, SplitDataset};

/// One structured record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub rec: f64,
    pub rec_perp: f64,
    pub disc_c: f64,
    pub disc_perp: f64,
    pub l2: f64,
    /// `rec + rec⊥ − λ·disc⊥ + λ·disc^C + l2`, averaged over examples.
    pub objective: f64,
    pub val_uauc: Option<f64>,
    pub val_loss: f64,
}

/// Where a run starts; a resumed run continues the epoch counter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    /// Epochs already completed by the model being trained.
    pub start_epoch: usize,
    /// Best validation UAUC so far and the non-improving epoch streak.
    pub best_val_uauc: Option<f64>,
    pub stale_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_uauc: Option<f64>,
    pub best_val_loss: f64,
    /// Last epoch run (absolute).
    pub last_epoch: usize,
    pub stale_epochs: usize,
    pub stopped_early: bool,
}

/// Validation UAUC and mean log-loss of the main prediction, skipping
/// cold-start users.
pub fn validate(model: &Model, rows: &[Interaction]) -> (Option<f64>, f64) {
    let cache = model.cache();
    let mut scored = Vec::with_capacity(rows.len());
    let mut loss = 0.0;
    for x in rows {
        if let Ok(s) = model.score_with(&cache, x.user, &[x.item], ScoringRule::Full) {
            loss += binary_xent(s[0], x.label as f64);
            scored.push((x.user, s[0], x.label));
        }
    }
    let loss = if scored.is_empty() {
        f64::INFINITY
    } else {
        loss / scored.len() as f64
    };
    (mean_auc(&user_aucs(&scored)).ok(), loss)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn better(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x > y,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Minibatch AdaGrad with early stopping on validation UAUC.
///
/// The model ends holding the best-validation parameters. On divergence the
/// model is restored to the last best state and an error is returned.
pub fn train(model: &mut Model, split: &SplitDataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let train_rows = &split.train;
    if train_rows.is_empty() {
        return Err(ModelError::Config("empty training partition".into()));
    }
    model.mark_known_users(train_rows);
    let weights = (cfg.kind == ModelKind::Ips)
        .then(|| ips_weights(train_rows, train_rows, &model.targets, model.n_categories, cfg.ips_clip));
    let width = cfg.width();
    let keep = 1.0 - cfg.dropout;

    let mut best_store: ParamStore = model.store.clone();
    let mut best_uauc = opts.best_val_uauc;
    let mut best_epoch = opts.start_epoch;
    let mut best_loss = f64::INFINITY;
    let mut stale = opts.stale_epochs;
    let mut log = Vec::new();
    let mut last_epoch = opts.start_epoch;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_rows.len()).collect();

    for epoch in opts.start_epoch + 1..=cfg.max_epochs {
        let mut rng = epoch_rng(opts.seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sums = LossTerms::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<Interaction> = chunk.iter().map(|&k| train_rows[k]).collect();
            let mut batch = Batch::from_interactions(&rows);
            if let Some(w) = &weights {
                batch.sample_weights = Some(chunk.iter().map(|&k| w[k]).collect());
            }
            if cfg.dropout > 0.0 {
                batch.dropout_mask = Some(
                    (0..chunk.len() * width)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect(),
                );
            }
            let out = model.forward(&batch)?;
            let total = out.tape.value(out.total).item();
            if !total.is_finite() {
                model.store = best_store;
                let head: Vec<_> = rows.iter().take(4).map(|x| (x.user, x.item, x.label)).collect();
                return Err(ModelError::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("non-finite loss {total}; terms {:?}; first rows {head:?}", out.terms),
                });
            }
            out.tape.backward(out.total, &mut model.store)?;
            if let Err(e) = adagrad_step(&mut model.store, cfg.learning_rate, cfg.epsilon) {
                model.store = best_store;
                return Err(match e {
                    GraphError::NonFiniteGradient(p) => ModelError::Diverged {
                        epoch,
                        batch: b,
                        detail: format!("non-finite gradient in `{p}`"),
                    },
                    other => other.into(),
                });
            }
            let n = chunk.len() as f64;
            sums.rec += out.terms.rec * n;
            sums.rec_perp += out.terms.rec_perp * n;
            sums.disc_c += out.terms.disc_c * n;
            sums.disc_perp += out.terms.disc_perp * n;
            sums.l2 += out.terms.l2 * n;
        }
        let n = train_rows.len() as f64;
        let terms = LossTerms {
            rec: sums.rec / n,
            rec_perp: sums.rec_perp / n,
            disc_c: sums.disc_c / n,
            disc_perp: sums.disc_perp / n,
            l2: sums.l2 / n,
        };
        let (val_uauc, val_loss) = validate(model, &split.validation);
        let entry = EpochLog {
            epoch,
            rec: terms.rec,
            rec_perp: terms.rec_perp,
            disc_c: terms.disc_c,
            disc_perp: terms.disc_perp,
            l2: terms.l2,
            objective: terms.objective(cfg.lambda),
            val_uauc,
            val_loss,
        };
        info!(
            "{} epoch {epoch}: rec {:.4} rec_perp {:.4} disc_c {:.4} disc_perp {:.4} val_uauc {:?}",
            cfg.kind.name(),
            entry.rec,
            entry.rec_perp,
            entry.disc_c,
            entry.disc_perp,
            val_uauc
        );
        log.push(entry);
        last_epoch = epoch;
        if better(val_uauc, best_uauc) || (best_uauc.is_none() && epoch == opts.start_epoch + 1) {
            best_uauc = val_uauc;
            best_epoch = epoch;
            best_loss = val_loss;
            best_store = model.store.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    if best_uauc.is_none() {
        warn!("no validation user had both classes; kept the first-epoch parameters");
    }
    model.store = best_store;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_uauc: best_uauc,
        best_val_loss: best_loss,
        last_epoch,
        stale_epochs: stale,
        stopped_early,
    })
}

/// One hyperparameter combination of a grid search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            l2: self.l2,
            dropout: self.dropout,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRun {
    pub point: GridPoint,
    pub outcome: TrainOutcome,
}

pub struct GridOutcome {
    pub runs: Vec<GridRun>,
    pub winner: usize,
    /// Human-readable record of how the winner was chosen.
    pub trace: Vec<String>,
    pub model: Model,
}

/// Trains every grid point from the same seed and keeps the winner:
/// highest validation UAUC, then lowest validation loss, then smallest λ.
pub fn grid_search(
    base: &ModelConfig,
    points: &[GridPoint],
    catalog: &Catalog,
    split: &SplitDataset,
    seed: u64,
) -> Result<GridOutcome> {
    if points.is_empty() {
        return Err(ModelError::Config("empty hyperparameter grid".into()));
    }
    let mut runs: Vec<GridRun> = Vec::new();
    let mut best: Option<(usize, Model)> = None;
    let mut trace = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let mut model = Model::new(p.apply(base), catalog, seed)?;
        let outcome = train(
            &mut model,
            split,
            &TrainOptions {
                seed,
                ..TrainOptions::default()
            },
        )?;
        trace.push(format!(
            "point {k} {p:?}: val_uauc {:?} val_loss {:.6}",
            outcome.best_val_uauc, outcome.best_val_loss
        ));
        let wins = match &best {
            None => true,
            Some((b, _)) => beats(&outcome, p, &runs[*b].outcome, &points[*b]),
        };
        runs.push(GridRun { point: *p, outcome });
        if wins {
            if let Some((b, _)) = &best {
                trace.push(format!("point {k} replaces point {b}"));
            }
            best = Some((k, model));
        }
    }
    let (winner, model) = best.expect("non-empty grid");
    trace.push(format!("winner: point {winner}"));
    Ok(GridOutcome {
        runs,
        winner,
        trace,
        model,
    })
}

fn beats(a: &TrainOutcome, pa: &GridPoint, b: &TrainOutcome, pb: &GridPoint) -> bool {
    let key = |x: &TrainOutcome| x.best_val_uauc.unwrap_or(f64::NEG_INFINITY);
    if key(a) != key(b) {
        key(a) > key(b)
    } else if a.best_val_loss != b.best_val_loss {
        a.best_val_loss < b.best_val_loss
    } else {
        pa.lambda < pb.lambda
    }
}
