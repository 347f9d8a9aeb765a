//! Accuracy and diversity metrics, the retrieval protocol, and the
//! category-specific test groups.

mod groups;
mod metrics;
mod report;
mod retrieval;

pub use groups::{case_study_report, category_specific_split, CaseStudy, CategoryGroup};
pub use metrics::{
    auc, category_distribution, coverage_at, entropy, entropy_at, mean_auc, ndcg_at, rank_items, recall_at,
    relaimpr, uauc, user_aucs, UserAuc,
};
pub use report::{build_report, EvalReport, GroupRow, ModelRow, ReportHeader};
pub use retrieval::{
    evaluate_model, evaluate_reranker, retrieval_eval, scored_pools, EvalData, MethodResult, RetrievalSummary,
    UserRetrieval,
};

use thiserror::Error;

use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no user has both positive and negative test items")]
    NoEligibleUser,
    #[error("degenerate base: UAUC {0} is not above 0.5")]
    DegenerateBase(f64),
    #[error("base model `{0}` missing from the evaluated set")]
    MissingBase(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
