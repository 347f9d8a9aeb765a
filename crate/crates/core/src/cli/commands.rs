use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{absolute, required, RunConfig};
use crate::eval::{case_study_report, scored_pools, CaseStudy, EvalData, EvalReport, ReportHeader};
use crate::hashing::{sha256_file, sha256_hex};
use crate::ingest::{read_split_dir, write_split_dir, LoadedSplit, SplitManifest};
use crate::models::{
    grid_search, load_model, save_model, train, EpochLog, Model, ModelManifest, TrainOptions, MANIFEST_FILE,
};
use crate::pipeline::{evaluate_all, prepare_raw, with_training_negatives, Entry, PipelineError, RawInputs, Result, SplitMode};
use crate::rerank::{write_ranked, Candidate, RankedRow};
use crate::synth::{sample_interactions, write_world, write_world_as_raw, SynthWorld};

const TRAIN_LOG: &str = "train_log.jsonl";
const GRID_FILE: &str = "grid.json";
const EVAL_MANIFEST: &str = "eval_manifest.json";
const REPORT_JSON: &str = "report.json";
const TOPK_JSON: &str = "topk.json";

fn resolve_paths(cfg: &mut RunConfig) -> Result<()> {
    let fix = |p: &mut Option<PathBuf>| -> Result<()> {
        if let Some(x) = p {
            *x = absolute(x)?;
        }
        Ok(())
    };
    let p = &mut cfg.prepare;
    for x in [&mut p.ratings, &mut p.items, &mut p.user_features, &mut p.item_features, &mut p.out] {
        fix(x)?;
    }
    fix(&mut cfg.synth.out)?;
    fix(&mut cfg.train.data)?;
    fix(&mut cfg.train.out)?;
    fix(&mut cfg.rerank.data)?;
    fix(&mut cfg.rerank.model)?;
    fix(&mut cfg.rerank.out)?;
    fix(&mut cfg.eval.data)?;
    fix(&mut cfg.eval.out)?;
    for m in &mut cfg.eval.models {
        m.dir = absolute(&m.dir)?;
    }
    fix(&mut cfg.report.eval)?;
    fix(&mut cfg.report.out)?;
    Ok(())
}

fn frozen(cfg: &RunConfig, seed: Option<u64>) -> Result<RunConfig> {
    let mut c = cfg.clone();
    resolve_paths(&mut c)?;
    if seed.is_some() {
        c.seed = seed;
    }
    Ok(c)
}

/// Builds a split directory from raw files. Returns the manifest digest.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<String> {
    let cfg = frozen(cfg, cfg.seed)?;
    let p = &cfg.prepare;
    let out = required(&p.out, "prepare.out")?;
    let inputs = RawInputs {
        ratings: required(&p.ratings, "prepare.ratings")?,
        items: required(&p.items, "prepare.items")?,
        user_features: p.user_features.as_deref().map(|f| (f, p.user_feature_columns.as_deref())),
        item_features: p.item_features.as_deref().map(|f| (f, p.item_feature_columns.as_deref())),
        descriptor: p.dataset.descriptor(),
        encoding: p.encoding,
    };
    let seed = cfg.seed.unwrap_or(0);
    let (split, catalog, raw_hash) = prepare_raw(&inputs, &p.split, seed)?;
    let mode = match p.split.mode {
        SplitMode::Global => "global",
        SplitMode::PerUser => "per-user",
    };
    let manifest = SplitManifest::new(inputs.descriptor, mode, p.split.kcore, raw_hash);
    let hash = write_split_dir(out, &split, &catalog, manifest)?;
    cfg.freeze(out)?;
    info!(
        "prepared {} users, {} items, {} categories; {} / {} / {} interactions",
        catalog.n_users(),
        catalog.n_items(),
        catalog.n_categories(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(hash)
}

/// Writes a world, its interactions as raw files, and the frozen config.
pub fn cmd_synth(cfg: &RunConfig, seed: u64) -> Result<SynthWorld> {
    let cfg = frozen(cfg, Some(seed))?;
    let s = &cfg.synth;
    let out = required(&s.out, "synth.out")?;
    let world = SynthWorld::generate(s.world.clone(), seed)?;
    let xs = sample_interactions(&world, s.exposure, s.skew, seed.wrapping_add(1))?;
    write_world(out, &world)?;
    write_world_as_raw(out, &world, &xs)?;
    cfg.freeze(out)?;
    Ok(world)
}

fn load_split(dir: &Path) -> Result<LoadedSplit> {
    Ok(read_split_dir(dir)?)
}

fn write_log(path: &Path, log: &[EpochLog], append: bool) -> Result<()> {
    let mut s = if append && path.exists() {
        fs::read_to_string(path)?
    } else {
        String::new()
    };
    for e in log {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains a model (or a grid) on a prepared split and saves the best
/// checkpoint. Returns the model manifest digest.
pub fn cmd_train(cfg: &RunConfig, seed: u64) -> Result<String> {
    let cfg = frozen(cfg, Some(seed))?;
    let t = &cfg.train;
    let data_dir = required(&t.data, "train.data")?;
    let out = required(&t.out, "train.out")?;
    let loaded = load_split(data_dir)?;
    let training = with_training_negatives(&loaded.split, loaded.catalog.n_items());

    let (model, manifest) = if t.resume {
        let (mut model, prev, _) = load_model(out, &loaded.catalog, Some(&loaded.manifest_hash))?;
        model.config.max_epochs = t.model.max_epochs;
        model.config.patience = t.model.patience;
        let outcome = train(
            &mut model,
            &training,
            &TrainOptions {
                seed: prev.seed,
                start_epoch: prev.last_epoch,
                best_val_uauc: prev.best_val_uauc,
                stale_epochs: prev.stale_epochs,
            },
        )?;
        write_log(&out.join(TRAIN_LOG), &outcome.log, true)?;
        let improved = outcome.best_val_uauc != prev.best_val_uauc;
        let manifest = ModelManifest {
            last_epoch: outcome.last_epoch,
            best_epoch: if improved { outcome.best_epoch } else { prev.best_epoch },
            best_val_uauc: outcome.best_val_uauc,
            stale_epochs: outcome.stale_epochs,
            ..prev
        };
        (model, manifest)
    } else {
        let points = t.grid.points(&t.model);
        let (model, outcome, trace) = if points.len() == 1 {
            let mut model = Model::new(points[0].apply(&t.model), &loaded.catalog, seed)?;
            let outcome = train(
                &mut model,
                &training,
                &TrainOptions {
                    seed,
                    ..TrainOptions::default()
                },
            )?;
            (model, outcome, Vec::new())
        } else {
            let g = grid_search(&t.model, &points, &loaded.catalog, &training, seed)?;
            fs::create_dir_all(out)?;
            fs::write(out.join(GRID_FILE), serde_json::to_string_pretty(&g.runs)?)?;
            for line in &g.trace {
                info!("{line}");
            }
            let outcome = g.runs[g.winner].outcome.clone();
            (g.model, outcome, g.trace)
        };
        fs::create_dir_all(out)?;
        write_log(&out.join(TRAIN_LOG), &outcome.log, false)?;
        let manifest = ModelManifest {
            last_epoch: outcome.last_epoch,
            best_epoch: outcome.best_epoch,
            best_val_uauc: outcome.best_val_uauc,
            stale_epochs: outcome.stale_epochs,
            grid_trace: trace,
            ..ModelManifest::new(&model, seed, &loaded.manifest_hash)
        };
        (model, manifest)
    };
    let hash = save_model(out, &model, manifest)?;
    cfg.freeze(out)?;
    Ok(hash)
}

/// Re-ranks the top of one model's rankings and writes them as a ranked
/// candidate file.
pub fn cmd_rerank(cfg: &RunConfig) -> Result<PathBuf> {
    let cfg = frozen(cfg, cfg.seed)?;
    let r = &cfg.rerank;
    let loaded = load_split(required(&r.data, "rerank.data")?)?;
    let model_dir = required(&r.model, "rerank.model")?;
    let (model, _, _) = load_model(model_dir, &loaded.catalog, Some(&loaded.manifest_hash))?;
    let data = EvalData::new(&loaded.split, &loaded.catalog, model.config.use_relevance)?;
    let pools = scored_pools(&model, r.scoring, &data)?;
    let mut rows = Vec::new();
    for (&u, scored) in &pools {
        let top = &scored[..r.pool_size.min(scored.len())];
        let cands: Vec<Candidate> = top
            .iter()
            .map(|&(item, relevance)| Candidate {
                item,
                relevance,
                target: data.target(item).to_vec(),
            })
            .collect();
        let relevance: BTreeMap<usize, f64> = top.iter().copied().collect();
        for (rank, item) in r.method.rerank(&cands, cands.len())?.into_iter().enumerate() {
            rows.push(RankedRow {
                user: u,
                item,
                score: relevance[&item],
                rank: rank + 1,
            });
        }
    }
    let out = match &r.out {
        Some(p) => p.clone(),
        None => model_dir.join(format!("reranked_{}.tsv", r.method.name())),
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_ranked(&out, &rows)?;
    cfg.freeze(out.parent().unwrap_or(Path::new(".")))?;
    Ok(out)
}

/// Provenance of one eval run: the split and models it read and digests of
/// the files it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub data_dir: PathBuf,
    pub data_manifest_hash: String,
    /// Model name to (directory, model manifest digest).
    pub models: BTreeMap<String, (PathBuf, String)>,
    pub files: BTreeMap<String, String>,
}

/// Evaluates the configured models and re-rankers. Returns the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let cfg = frozen(cfg, cfg.seed)?;
    let e = &cfg.eval;
    let data_dir = required(&e.data, "eval.data")?;
    let out = required(&e.out, "eval.out")?;
    if e.models.is_empty() {
        return Err(PipelineError::Config("eval.models is empty".into()));
    }
    let loaded = load_split(data_dir)?;
    let mut models: BTreeMap<PathBuf, (Model, String)> = BTreeMap::new();
    for m in &e.models {
        if !models.contains_key(&m.dir) {
            let (model, _, hash) = load_model(&m.dir, &loaded.catalog, Some(&loaded.manifest_hash))?;
            models.insert(m.dir.clone(), (model, hash));
        }
    }
    let use_relevance = models.values().next().map(|(m, _)| m.config.use_relevance).unwrap_or(false);
    let data = EvalData::new(&loaded.split, &loaded.catalog, use_relevance)?;
    let entries: Vec<Entry<'_>> = e
        .models
        .iter()
        .map(|m| Entry {
            name: m.name.clone(),
            model: &models[&m.dir].0,
            rule: m.scoring,
        })
        .collect();
    let header = ReportHeader {
        data_manifest_hash: loaded.manifest_hash.clone(),
        model_manifest_hashes: e.models.iter().map(|m| (m.name.clone(), models[&m.dir].1.clone())).collect(),
        config: serde_json::to_value(e)?,
        ..ReportHeader::default()
    };
    let (report, methods) = evaluate_all(&entries, &e.rerankers, &data, &loaded.catalog.category_names, &e.report, header)?;

    fs::create_dir_all(out)?;
    let topk: BTreeMap<String, BTreeMap<usize, Vec<usize>>> = methods
        .iter()
        .map(|m| {
            let lists = m
                .rankings
                .iter()
                .map(|(&u, order)| (u, order.iter().take(e.keep_top).copied().collect()))
                .collect();
            (m.name.clone(), lists)
        })
        .collect();
    let outputs = [
        ("report.tsv", report.to_tsv()),
        ("groups.tsv", report.groups_tsv()),
        ("per_user.jsonl", report.per_user_jsonl()?),
        (REPORT_JSON, serde_json::to_string_pretty(&report)?),
        (TOPK_JSON, serde_json::to_string(&topk)?),
    ];
    let mut files = BTreeMap::new();
    for (name, text) in outputs {
        fs::write(out.join(name), &text)?;
        files.insert(name.to_string(), sha256_hex(text.as_bytes()));
    }
    let manifest = EvalManifest {
        data_dir: data_dir.clone(),
        data_manifest_hash: loaded.manifest_hash.clone(),
        models: e
            .models
            .iter()
            .map(|m| (m.name.clone(), (m.dir.clone(), models[&m.dir].1.clone())))
            .collect(),
        files,
    };
    fs::write(out.join(EVAL_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    cfg.freeze(out)?;
    Ok(report)
}

fn verify(what: &str, expected: &str, found: String) -> Result<()> {
    if expected != found {
        return Err(PipelineError::Eval(crate::eval::EvalError::Invalid(format!(
            "hash chain broken at {what}: expected {expected}, found {found}"
        ))));
    }
    Ok(())
}

/// Re-checks the whole hash chain of an eval run, then writes the
/// comparison grid and per-user category histograms.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<CaseStudy>> {
    let cfg = frozen(cfg, cfg.seed)?;
    let r = &cfg.report;
    let eval_dir = required(&r.eval, "report.eval")?;
    let out = r.out.clone().unwrap_or_else(|| eval_dir.join("report"));
    let manifest: EvalManifest = serde_json::from_str(&fs::read_to_string(eval_dir.join(EVAL_MANIFEST))?)?;
    for (name, digest) in &manifest.files {
        verify(name, digest, sha256_file(&eval_dir.join(name))?)?;
    }
    let loaded = load_split(&manifest.data_dir)?;
    verify("split manifest", &manifest.data_manifest_hash, loaded.manifest_hash.clone())?;
    for (name, (dir, digest)) in &manifest.models {
        verify(&format!("model `{name}`"), digest, sha256_file(&dir.join(MANIFEST_FILE))?)?;
        let model: ModelManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        verify(&format!("model `{name}` training data"), &loaded.manifest_hash, model.data_manifest_hash)?;
    }
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(eval_dir.join(REPORT_JSON))?)?;
    let topk: BTreeMap<String, BTreeMap<usize, Vec<usize>>> =
        serde_json::from_str(&fs::read_to_string(eval_dir.join(TOPK_JSON))?)?;
    let names: Vec<String> = if r.models.is_empty() {
        report.rows.iter().map(|row| row.name.clone()).collect()
    } else {
        r.models.clone()
    };
    for n in &names {
        if report.row(n).is_none() {
            return Err(PipelineError::Config(format!("report.models: `{n}` was not evaluated")));
        }
    }

    let catalog = &loaded.catalog;
    let users: Vec<usize> = if r.users.is_empty() {
        let first = &topk[&names[0]];
        let with_test: Vec<usize> = loaded
            .split
            .test
            .iter()
            .filter(|x| x.is_positive() && first.contains_key(&x.user))
            .map(|x| x.user)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
        with_test.choose_multiple(&mut rng, r.sample_users).copied().collect()
    } else {
        r.users
            .iter()
            .map(|id| {
                catalog
                    .user_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| PipelineError::Config(format!("unknown user id `{id}`")))
            })
            .collect::<Result<_>>()?
    };
    let mut targets = Vec::with_capacity(catalog.n_items() * catalog.n_categories());
    for t in catalog.targets(false)? {
        targets.extend_from_slice(t.as_slice());
    }

    let mut studies = Vec::new();
    let mut tsv = String::from("user\tsource\tk");
    for c in &catalog.category_names {
        tsv.push('\t');
        tsv.push_str(c);
    }
    tsv.push('\n');
    for &u in &users {
        let lists: BTreeMap<String, Vec<usize>> = names
            .iter()
            .map(|n| (n.clone(), topk[n].get(&u).cloned().unwrap_or_default()))
            .collect();
        let cs = case_study_report(
            u,
            &loaded.split.train,
            &loaded.split.test,
            &lists,
            &targets,
            catalog.n_categories(),
            r.k,
        );
        let mut line = |source: &str, k: String, hist: &[f64]| {
            let cells: Vec<String> = hist.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(tsv, "{}\t{source}\t{k}\t{}", catalog.user_ids[u], cells.join("\t"));
        };
        line("train", "-".into(), &cs.train);
        line("test", "-".into(), &cs.test);
        for n in &names {
            line(n, r.k.to_string(), &cs.recommendations[n]);
        }
        studies.push(cs);
    }

    let selected = EvalReport {
        rows: report.rows.iter().filter(|row| names.contains(&row.name)).cloned().collect(),
        groups: report
            .groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.metrics.retain(|k, _| names.contains(k));
                g
            })
            .collect(),
        ..report.clone()
    };
    fs::create_dir_all(&out)?;
    fs::write(out.join("comparison.tsv"), selected.to_tsv())?;
    fs::write(out.join("comparison_groups.tsv"), selected.groups_tsv())?;
    fs::write(out.join("case_study.tsv"), tsv)?;
    fs::write(out.join("case_study.json"), serde_json::to_string_pretty(&studies)?)?;
    cfg.freeze(&out)?;
    Ok(studies)
}
