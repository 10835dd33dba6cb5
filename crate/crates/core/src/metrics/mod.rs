//! Pose errors, Procrustes alignment, retrieval recall and the closed-loop
//! caption metric.

pub mod pose;
pub mod report;
pub mod retrieval;

pub use pose::{caption_consistency, mpjpe, mpjre, pa_mpjpe, pa_mpjpe_with, procrustes, Alignment};
pub use report::{format_table, recall_key, MetricReport};
pub use retrieval::{
    recall_at_k, recall_from_embeddings, recall_from_scores, train_retrieval, Direction, RetrievalConfig,
    RetrievalModel, DEFAULT_KS,
};
