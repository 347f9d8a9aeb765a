//! Small end-to-end runs of the command line, in-process.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dcrs::cli::{main_with, RunConfig, FROZEN_CONFIG};

pub const SEED: u64 = 7;

/// Config of a desk-sized run: tiny world, few epochs, every model kind and
/// both re-rankers.
pub fn small_config() -> String {
    r#"
[synth]
exposure = 30
[synth.world]
n_users = 80
n_items = 240
n_categories = 4

[prepare]
dataset = "synthetic"

[train.model]
dim = 8
max_epochs = 4
batch_size = 256

[[eval.models]]
name = "NFM"
dir = "models/nfm"
[[eval.models]]
name = "Unawareness"
dir = "models/unawareness"
[[eval.models]]
name = "IPS"
dir = "models/ips"
[[eval.models]]
name = "DCRS"
dir = "models/dcrs"
[[eval.models]]
name = "DCRS_CI"
dir = "models/dcrs"
scoring = "category-independent"

[[eval.rerankers]]
name = "MMR"
base = "NFM"
pool_size = 60
reranker = { method = "mmr", theta = 0.7 }
[[eval.rerankers]]
name = "DPP"
base = "NFM"
pool_size = 60
reranker = { method = "dpp", theta = 0.7 }

[report]
sample_users = 2
"#
    .to_string()
}

pub fn cli(root: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["dcrs".to_string()];
    for a in args {
        full.push(a.replace("{root}", &root.display().to_string()));
    }
    main_with(full)
}

fn must(root: &Path, args: &[&str]) {
    assert_eq!(cli(root, args), 0, "dcrs {}", args.join(" "));
}

pub const KINDS: [&str; 4] = ["nfm", "unawareness", "ips", "dcrs"];

/// Runs synth → prepare → train (all kinds) → rerank → eval → report under
/// `root`.
pub fn run_pipeline(root: &Path) {
    let cfg = root.join("run.toml");
    fs::write(&cfg, small_config()).unwrap();
    let c = cfg.display().to_string();
    let seed = SEED.to_string();
    must(root, &["--config", &c, "--seed", &seed, "synth", "--out", "{root}/world"]);
    must(
        root,
        &[
            "--config",
            &c,
            "--seed",
            &seed,
            "prepare",
            "--ratings",
            "{root}/world/ratings.tsv",
            "--items",
            "{root}/world/items.tsv",
            "--out",
            "{root}/data",
        ],
    );
    for kind in KINDS {
        let out = format!("{{root}}/models/{kind}");
        must(
            root,
            &["--config", &c, "--seed", &seed, "train", "--data", "{root}/data", "--out", &out, "--kind", kind],
        );
    }
    must(
        root,
        &[
            "--config",
            &c,
            "rerank",
            "--data",
            "{root}/data",
            "--model",
            "{root}/models/nfm",
            "--method",
            "dpp",
            "--theta",
            "0.6",
            "--pool-size",
            "60",
            "--out",
            "{root}/rerank/dpp.tsv",
        ],
    );
    eval_with_models(root, &c);
    must(root, &["--config", &c, "--seed", "1", "report", "--eval", "{root}/eval"]);
}

fn eval_with_models(root: &Path, config: &str) {
    // Array-of-tables entries cannot be addressed by `--set`, so the eval
    // config is rewritten with absolute model directories.
    let mut cfg = RunConfig::load(Path::new(config)).unwrap();
    for m in &mut cfg.eval.models {
        m.dir = root.join(&m.dir);
    }
    let path = root.join("eval.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let p = path.display().to_string();
    must(root, &["--config", &p, "eval", "--data", "{root}/data", "--out", "{root}/eval"]);
}

/// Output files whose bytes must survive a rerun, relative to `root`.
pub fn tracked_files() -> Vec<PathBuf> {
    let mut out = vec![
        "world/world.ckpt",
        "world/world.json",
        "world/ratings.tsv",
        "world/items.tsv",
        "data/manifest.json",
        "rerank/dpp.tsv",
        "eval/report.tsv",
        "eval/groups.tsv",
        "eval/per_user.jsonl",
        "eval/report.json",
        "eval/topk.json",
        "eval/eval_manifest.json",
        "eval/report/comparison.tsv",
        "eval/report/comparison_groups.tsv",
        "eval/report/case_study.tsv",
        "eval/report/case_study.json",
    ]
    .into_iter()
    .map(PathBuf::from)
    .collect::<Vec<_>>();
    for kind in KINDS {
        out.push(PathBuf::from(format!("models/{kind}/model.ckpt")));
        out.push(PathBuf::from(format!("models/{kind}/model.json")));
        out.push(PathBuf::from(format!("models/{kind}/train_log.jsonl")));
    }
    out
}

pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    tracked_files()
        .into_iter()
        .map(|p| {
            let bytes = fs::read(root.join(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p, bytes)
        })
        .collect()
}

fn frozen_seed(dir: &Path) -> Option<String> {
    RunConfig::load(&dir.join(FROZEN_CONFIG)).unwrap().seed.map(|s| s.to_string())
}

/// Reruns every command of a finished pipeline from the frozen config it
/// left behind.
pub fn rerun_from_frozen(root: &Path) {
    let mut steps: Vec<(PathBuf, &str)> = vec![(root.join("world"), "synth"), (root.join("data"), "prepare")];
    for kind in KINDS {
        steps.push((root.join("models").join(kind), "train"));
    }
    steps.push((root.join("rerank"), "rerank"));
    steps.push((root.join("eval"), "eval"));
    steps.push((root.join("eval/report"), "report"));
    for (dir, cmd) in steps {
        let cfg = dir.join(FROZEN_CONFIG).display().to_string();
        let mut args = vec!["--config".to_string(), cfg];
        if let Some(seed) = frozen_seed(&dir) {
            args.push("--seed".into());
            args.push(seed);
        }
        args.push(cmd.into());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(cli(root, &refs), 0, "rerun of {cmd} from {}", dir.display());
    }
}

/// Files that differ between two snapshots.
pub fn differences(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Vec<String> {
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect()
}
