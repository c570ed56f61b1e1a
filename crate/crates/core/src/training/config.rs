use serde::{Deserialize, Serialize};

use crate::error::{AimsError, Result};
use crate::model::ModelConfig;

/// Weights of the three per-level terms: ness cross-entropy, mask BCE, mask dice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub ce: f64,
    pub bce: f64,
    pub dice: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        TermWeights { ce: 2.0, bce: 5.0, dice: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    /// Linear ramp from `learning_rate / warmup_steps` over the first steps.
    pub warmup_steps: usize,
    /// Steps after which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub loss_weights: TermWeights,
    pub match_weights: TermWeights,
    pub assoc_weight: f64,
    /// Weight of unmatched queries in the ness loss, relative to matched ones.
    pub unmatched_weight: f64,
    /// Global-norm gradient clipping; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Checkpoint every this many steps when an output path is set; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.05,
            iterations: 2000,
            warmup_steps: 0,
            milestones: vec![1500, 1800],
            decay_factor: 0.1,
            batch_size: 8,
            loss_weights: TermWeights::default(),
            match_weights: TermWeights::default(),
            assoc_weight: 1.0,
            unmatched_weight: 0.1,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// Full-scale schedule of record.
    pub fn full() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            iterations: 36_000,
            milestones: vec![28_000, 33_000],
            batch_size: 64,
            ..TrainConfig::toy()
        }
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        let ramp = if step < self.warmup_steps { (step + 1) as f64 / self.warmup_steps as f64 } else { 1.0 };
        ramp * self.learning_rate * self.decay_factor.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AimsError::Config(m));
        let w = [self.loss_weights, self.match_weights];
        if w.iter().any(|t| t.ce < 0.0 || t.bce < 0.0 || t.dice < 0.0) || self.assoc_weight < 0.0 || self.unmatched_weight < 0.0 {
            return bad("loss and matching weights must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("learning rate must be positive; weight decay and clip non-negative".into());
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return bad("batch size and iteration count must be positive".into());
        }
        if self.milestones.windows(2).any(|p| p[0] >= p[1]) {
            return bad(format!("milestones {:?} must be strictly ascending", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.iterations) {
            return bad(format!("milestones {:?} must be below the iteration count {}", self.milestones, self.iterations));
        }
        Ok(())
    }
}

/// Model and training settings read from one TOML file with `[model]` and `[train]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let c = TrainConfig::toy();
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert!((c.learning_rate_at(1500) - 1e-4).abs() < 1e-15);
        assert!((c.learning_rate_at(1999) - 1e-5).abs() < 1e-15);
        let f = TrainConfig::full();
        f.validate().unwrap();
        assert!((f.learning_rate_at(33_000) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_milestones() {
        let mut c = TrainConfig::toy();
        c.milestones = vec![1800, 1500];
        assert!(c.validate().is_err());
        c.milestones = vec![2000];
        assert!(c.validate().is_err());
    }
}
