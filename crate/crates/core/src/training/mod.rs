//! Set-prediction training: matching, losses, optimizer and the sampled training loop.

pub mod config;
pub mod hungarian;
pub mod losses;
pub mod optim;
pub mod trainer;

pub use config::{RunConfig, TermWeights, TrainConfig};
pub use hungarian::{hungarian_match, MatchResult};
pub use trainer::{sample_objective, StepRecord, Trainer};
