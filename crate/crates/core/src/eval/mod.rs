//! Evaluation: distance tables, PCA of embeddings, and the mock
//! authentication system built on a store of distorted templates.

mod auth;
mod distances;
mod pca;

pub use auth::{
    compute_eer, compute_metrics, evaluate_store, mock_auth_eval, roc, select_auth_sets, AuthOutcome,
    AuthProtocol, AuthSets, ConfusionMatrix, EvaluationReport, Metrics, SweepRow, Template, TemplateStore,
    ThresholdSweep, Verification,
};
pub use distances::{distance_table, DistanceRow};
pub use pca::{pca_project, Pca};
