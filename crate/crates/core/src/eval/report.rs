use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::groups::{category_specific_split, CategoryGroup};
use super::metrics::{auc, mean_auc, relaimpr, user_aucs, UserAuc};
use super::retrieval::{retrieval_eval, EvalData, MethodResult, RetrievalSummary};
use super::{EvalError, Result};

/// Provenance and settings echoed at the top of every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub data_manifest_hash: String,
    /// Model name to model manifest digest.
    pub model_manifest_hashes: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub eval_negatives: String,
    pub entropy: String,
    pub ce_weighting: String,
    pub base_model: String,
    /// Model name to scoring rule description.
    pub scoring: BTreeMap<String, String>,
    pub cold_start_users_skipped: usize,
}

/// One Table-2-style row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
    pub relaimpr: Option<f64>,
    pub retrieval: RetrievalSummary,
    pub user_aucs: Vec<UserAuc>,
}

/// AUC and UAUC of every model inside one category combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub categories: Vec<String>,
    pub n_rows: usize,
    /// Model name to (AUC, UAUC); AUC absent for pool-restricted methods.
    pub metrics: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub ks: Vec<usize>,
    pub rows: Vec<ModelRow>,
    pub groups: Vec<GroupRow>,
}

fn accuracy(method: &MethodResult, data: &EvalData, rows: &[usize]) -> (Option<f64>, Option<f64>, Vec<UserAuc>) {
    let mut scored = Vec::with_capacity(rows.len());
    for &r in rows {
        if let Some(s) = method.row_scores[r] {
            let x = &data.rows[r];
            scored.push((x.user, s, x.label));
        }
    }
    let per_user = user_aucs(&scored);
    let uauc = mean_auc(&per_user).ok();
    let auc = if method.pool_restricted {
        None
    } else {
        let (s, y): (Vec<f64>, Vec<u8>) = scored.iter().map(|&(_, s, y)| (s, y)).unzip();
        auc(&s, &y)
    };
    (auc, uauc, per_user)
}

/// Computes every metric for every method. RelaImpr is taken against the
/// method named `base`, which must be present and above 0.5 UAUC.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    methods: &[MethodResult],
    data: &EvalData,
    base: &str,
    ks: &[usize],
    entropy_base: f64,
    category_names: &[String],
    top_groups: usize,
    mut header: ReportHeader,
) -> Result<EvalReport> {
    let all: Vec<usize> = (0..data.rows.len()).collect();
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let (auc, uauc, per_user) = accuracy(m, data, &all);
        rows.push(ModelRow {
            name: m.name.clone(),
            auc,
            uauc,
            relaimpr: None,
            retrieval: retrieval_eval(&m.rankings, data, ks, entropy_base),
            user_aucs: per_user,
        });
        header.scoring.insert(m.name.clone(), m.scoring.clone());
    }
    let base_uauc = rows
        .iter()
        .find(|r| r.name == base)
        .ok_or_else(|| EvalError::MissingBase(base.into()))?
        .uauc
        .ok_or(EvalError::NoEligibleUser)?;
    for r in &mut rows {
        if let Some(u) = r.uauc {
            r.relaimpr = Some(relaimpr(u, base_uauc)?);
        }
    }
    let mut groups = Vec::new();
    if !data.rows.is_empty() {
        let split: Vec<CategoryGroup> = category_specific_split(&data.rows, &data.item_categories, top_groups)?;
        for g in split {
            let metrics = methods
                .iter()
                .map(|m| {
                    let (a, u, _) = accuracy(m, data, &g.rows);
                    (m.name.clone(), (a, u))
                })
                .collect();
            groups.push(GroupRow {
                categories: g.categories.iter().map(|&c| category_names[c].clone()).collect(),
                n_rows: g.rows.len(),
                metrics,
            });
        }
    }
    header.base_model = base.into();
    header.eval_negatives = format!("{:?}", data.negatives_mode);
    header.entropy = if entropy_base == std::f64::consts::E {
        "natural log".into()
    } else {
        format!("log base {entropy_base}")
    };
    header.ce_weighting = "fractional by soft category target".into();
    header.cold_start_users_skipped = data.cold_start_users.len();
    Ok(EvalReport {
        header,
        ks: ks.to_vec(),
        rows,
        groups,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Tab-separated table, one row per model, `-` for absent cells, preceded
    /// by `#` header lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let h = &self.header;
        let _ = writeln!(s, "# data_manifest: {}", h.data_manifest_hash);
        for (name, hash) in &h.model_manifest_hashes {
            let _ = writeln!(s, "# model_manifest[{name}]: {hash}");
        }
        for (name, rule) in &h.scoring {
            let _ = writeln!(s, "# scoring[{name}]: {rule}");
        }
        let _ = writeln!(s, "# eval_negatives: {}", h.eval_negatives);
        let _ = writeln!(s, "# entropy: {}; CE weighting: {}", h.entropy, h.ce_weighting);
        let _ = writeln!(s, "# base_model: {}", h.base_model);
        let _ = writeln!(s, "# cold_start_users_skipped: {}", h.cold_start_users_skipped);
        let _ = writeln!(s, "# config: {}", h.config);
        let mut cols = vec!["model".to_string(), "AUC".into(), "UAUC".into(), "RelaImpr".into()];
        for k in &self.ks {
            cols.extend([format!("R@{k}"), format!("NDCG@{k}"), format!("CE@{k}"), format!("CC@{k}")]);
        }
        s.push_str(&cols.join("\t"));
        s.push('\n');
        for r in &self.rows {
            let mut line = vec![
                r.name.clone(),
                cell(r.auc),
                cell(r.uauc),
                r.relaimpr.map_or_else(|| "-".into(), |x| format!("{x:.2}%")),
            ];
            let t = &r.retrieval;
            for j in 0..self.ks.len() {
                line.extend([cell(t.recall[j]), cell(t.ndcg[j]), cell(t.ce[j]), cell(t.cc[j])]);
            }
            s.push_str(&line.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Category-specific table: one line per (group, model).
    pub fn groups_tsv(&self) -> String {
        let mut s = String::from("categories\tn_rows\tmodel\tAUC\tUAUC\n");
        for g in &self.groups {
            for (name, (a, u)) in &g.metrics {
                let _ = writeln!(s, "{}\t{}\t{name}\t{}\t{}", g.categories.join("|"), g.n_rows, cell(*a), cell(*u));
            }
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Per-user records as JSON lines.
    pub fn per_user_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            let aucs: BTreeMap<usize, f64> = r.user_aucs.iter().map(|u| (u.user, u.auc)).collect();
            for u in &r.retrieval.per_user {
                let rec = serde_json::json!({
                    "model": r.name,
                    "user": u.user,
                    "auc": aucs.get(&u.user),
                    "recall": u.recall,
                    "ndcg": u.ndcg,
                    "cc": u.cc,
                    "ce": u.ce,
                    "ks": self.ks,
                });
                s.push_str(&serde_json::to_string(&rec)?);
                s.push('\n');
            }
        }
        Ok(s)
    }
}
