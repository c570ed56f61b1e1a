//! Class-agnostic mask AP, association recall and federated evaluation.

pub mod federated;
pub mod metrics;

pub use federated::{evaluate_records, federated_evaluate, EvalRecord, FederatedReport, SubsetReport};
pub use metrics::{association_recall_at_k, average_precision, ApResult, ImageDetections, ImageLinks};
