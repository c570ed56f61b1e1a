use serde::{Deserialize, Serialize};

use crate::error::{AimsError, Result};
use crate::level::{Level, LevelPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcmConfig {
    pub enabled: bool,
    pub entity_part: bool,
    pub relation_entity: bool,
}

impl Default for TcmConfig {
    fn default() -> Self {
        TcmConfig { enabled: true, entity_part: true, relation_entity: true }
    }
}

impl TcmConfig {
    pub fn pair_enabled(&self, pair: LevelPair) -> bool {
        self.enabled
            && match pair {
                LevelPair::EntityPart => self.entity_part,
                LevelPair::RelationEntity => self.relation_entity,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Feature width `C`, shared by the pyramid, queries and mask-prompt features.
    pub channels: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Query counts, indexed by [`Level::index`].
    pub queries: [usize; 3],
    pub num_blocks: usize,
    /// Attention-mask threshold on the previous block's mask probabilities.
    pub attn_threshold: f64,
    pub tcm: TcmConfig,
    /// Per-block auxiliary losses.
    pub deep_supervision: bool,
    /// Keep predictions with `sigmoid(ness) > keep_threshold`.
    pub keep_threshold: f64,
    pub assoc_threshold: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::toy()
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by the tests and the CLI defaults.
    pub fn toy() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            channels: 32,
            heads: 4,
            ffn_hidden: 64,
            queries: [20, 20, 20],
            num_blocks: 3,
            attn_threshold: 0.5,
            tcm: TcmConfig::default(),
            deep_supervision: true,
            keep_threshold: 0.5,
            assoc_threshold: 0.5,
            seed: 0,
        }
    }

    /// Full-width configuration (256 channels, 9 blocks, 100 queries per level).
    pub fn full() -> Self {
        ModelConfig {
            channels: 256,
            heads: 8,
            ffn_hidden: 2048,
            queries: [100, 100, 100],
            num_blocks: 9,
            deep_supervision: false,
            ..ModelConfig::toy()
        }
    }

    pub fn num_queries(&self, level: Level) -> usize {
        self.queries[level.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AimsError::Config(m));
        if self.height == 0 || self.height % 32 != 0 {
            return bad(format!("height {} must be a positive multiple of 32", self.height));
        }
        if self.width == 0 || self.width % 32 != 0 {
            return bad(format!("width {} must be a positive multiple of 32", self.width));
        }
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} must be a positive multiple of heads {}", self.channels, self.heads));
        }
        if self.ffn_hidden == 0 {
            return bad("ffn_hidden must be positive".into());
        }
        if self.queries.iter().any(|&n| n == 0) {
            return bad(format!("query counts {:?} must be positive", self.queries));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        if !(self.attn_threshold > 0.0 && self.attn_threshold < 1.0) {
            return bad(format!("attn_threshold {} outside (0, 1)", self.attn_threshold));
        }
        if !(0.0..=1.0).contains(&self.keep_threshold) || !(0.0..=1.0).contains(&self.assoc_threshold) {
            return bad("keep and association thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }
}
