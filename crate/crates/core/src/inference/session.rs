use serde::{Deserialize, Serialize};

use super::{segment, InferenceResult};
use crate::data::prompt::{MaskPrompt, PromptType};
use crate::data::scene::Image;
use crate::error::{AimsError, Result};
use crate::level::Level;
use crate::mask::Mask;
use crate::model::AimsModel;

/// What the next drill-down step uses as its prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Mask `index` of the previous step's result.
    Index(usize),
    /// Mask `index` of an earlier step's result (forks the history).
    Step { step: usize, index: usize },
    /// A user-supplied mask.
    Mask(Mask),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSource {
    FullImage,
    User,
    Selection { step: usize, index: usize, level: Level },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillStep {
    pub source: PromptSource,
    pub prompt: MaskPrompt,
    pub level: Level,
    pub result: InferenceResult,
    /// Warnings such as a coarser level than the selected mask's.
    pub flags: Vec<String>,
}

/// Iterative prompt inference on one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillDownSession {
    pub id: String,
    pub image: Image,
    pub history: Vec<DrillStep>,
}

/// Prompt type implied by selecting a mask of `level`.
pub fn selection_prompt_type(level: Level) -> PromptType {
    match level {
        Level::Entity => PromptType::OneEntity,
        Level::Relation => PromptType::TwoEntities,
        Level::Part => PromptType::PartialImage,
    }
}

impl DrillDownSession {
    pub fn new(id: impl Into<String>, image: Image) -> Self {
        DrillDownSession { id: id.into(), image, history: vec![] }
    }

    /// First step: full-image prompt at `level`, identical to that level of one-step inference.
    pub fn start(&mut self, model: &AimsModel, level: Level) -> Result<&DrillStep> {
        let mut result = segment(model, &self.image, None, None)?;
        result.levels.retain(|l, _| *l == level);
        result.associations.clear();
        result.provenance.levels = vec![level];
        let prompt = MaskPrompt::full(self.image.height(), self.image.width());
        self.history.push(DrillStep { source: PromptSource::FullImage, prompt, level, result, flags: vec![] });
        Ok(self.history.last().unwrap())
    }

    /// Runs prompt inference at `level` on the selected mask and appends the step.
    pub fn drill(&mut self, model: &AimsModel, selection: Selection, level: Level) -> Result<&DrillStep> {
        let (h, w) = (self.image.height(), self.image.width());
        let mut flags = Vec::new();
        let (source, prompt) = match selection {
            Selection::Mask(mask) => (PromptSource::User, MaskPrompt::new(mask, PromptType::PartialImage, h, w)?),
            Selection::Index(index) => {
                let last = self
                    .history
                    .len()
                    .checked_sub(1)
                    .ok_or_else(|| AimsError::InvalidSelection("session has no previous step".into()))?;
                self.select(last, index, level, &mut flags)?
            }
            Selection::Step { step, index } => self.select(step, index, level, &mut flags)?,
        };
        let result = segment(model, &self.image, Some(&prompt), Some(level))?;
        if result.provenance.out_of_distribution {
            flags.push(format!("{} prompt with {} decoder is outside the trained combinations", prompt.prompt_type, level));
        }
        self.history.push(DrillStep { source, prompt, level, result, flags });
        Ok(self.history.last().unwrap())
    }

    fn select(&self, step: usize, index: usize, level: Level, flags: &mut Vec<String>) -> Result<(PromptSource, MaskPrompt)> {
        let prev = self.history.get(step).ok_or_else(|| {
            AimsError::InvalidSelection(format!("step {step} out of range ({} steps)", self.history.len()))
        })?;
        let masks = &prev.result.level(prev.level).expect("step holds its level").masks;
        let mask = masks.get(index).ok_or_else(|| {
            AimsError::InvalidSelection(format!("mask index {index} out of range ({} masks)", masks.len()))
        })?;
        if level.index() > prev.level.index() {
            flags.push(format!("level regression: {} requested inside a {} mask", level, prev.level));
        }
        let (h, w) = (self.image.height(), self.image.width());
        let prompt = MaskPrompt::new(mask.clone(), selection_prompt_type(prev.level), h, w)?;
        Ok((PromptSource::Selection { step, index, level: prev.level }, prompt))
    }

    /// Re-executes every recorded step from its stored prompt.
    pub fn replay(&self, model: &AimsModel) -> Result<Vec<InferenceResult>> {
        let mut replica = DrillDownSession::new(self.id.clone(), self.image.clone());
        for step in &self.history {
            match &step.source {
                PromptSource::FullImage => {
                    replica.start(model, step.level)?;
                }
                PromptSource::User => {
                    replica.drill(model, Selection::Mask(step.prompt.mask.clone()), step.level)?;
                }
                PromptSource::Selection { step: from, index, .. } => {
                    replica.drill(model, Selection::Step { step: *from, index: *index }, step.level)?;
                }
            }
        }
        Ok(replica.history.into_iter().map(|s| s.result).collect())
    }
}
