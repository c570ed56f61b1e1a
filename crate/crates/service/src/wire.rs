//! Request and response bodies. Masks travel as run-length encodings.

use base64::Engine;
use serde::{Deserialize, Serialize};

use aims_core::data::{MaskPrompt, PromptType};
use aims_core::inference::{DrillStep, InferenceResult};
use aims_core::mask::Rle;
use aims_core::{Level, Mask};

use crate::error::ApiError;

/// Which split of the served corpus an image comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageInput {
    /// Base64 of an encoded image file (PNG or any format the decoder reads).
    Encoded(String),
    /// Base64 of packed 8-bit RGB rows.
    Rgb { width: usize, height: usize, data: String },
    /// An image of the corpus the service was started with.
    Corpus { profile: String, split: SplitName, index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptInput {
    Rle(Rle),
    /// Union of polygons given as `[x, y]` vertices in pixel coordinates.
    Polygons(Vec<Vec<[f64; 2]>>),
}

impl PromptInput {
    pub fn to_mask(&self, height: usize, width: usize) -> Result<Mask, ApiError> {
        match self {
            PromptInput::Rle(rle) => {
                let mask = rle.decode()?;
                if mask.height() != height || mask.width() != width {
                    return Err(ApiError::bad_request(format!(
                        "prompt is {}x{} but the image is {height}x{width}",
                        mask.height(),
                        mask.width()
                    )));
                }
                Ok(mask)
            }
            PromptInput::Polygons(polys) => {
                let mut mask = Mask::empty(height, width);
                for (i, poly) in polys.iter().enumerate() {
                    if poly.len() < 3 {
                        return Err(ApiError::bad_request(format!("polygon {i} has fewer than 3 vertices")));
                    }
                    let pts: Vec<(f64, f64)> = poly.iter().map(|p| (p[0], p[1])).collect();
                    mask.or_assign(&Mask::from_polygon(height, width, &pts));
                }
                Ok(mask)
            }
        }
    }

    pub fn to_prompt(&self, height: usize, width: usize, prompt_type: Option<PromptType>) -> Result<MaskPrompt, ApiError> {
        let mask = self.to_mask(height, width)?;
        Ok(MaskPrompt::new(mask, prompt_type.unwrap_or(PromptType::PartialImage), height, width)?)
    }
}

pub fn decode_base64(field: &str, data: &str) -> Result<Vec<u8>, ApiError> {
    base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: ImageInput,
    #[serde(default)]
    pub prompt: Option<PromptInput>,
    #[serde(default)]
    pub prompt_type: Option<PromptType>,
    #[serde(default)]
    pub level: Option<Level>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub result: InferenceResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub image: ImageInput,
    /// Level of the first (full-image) step.
    #[serde(default = "default_start_level")]
    pub level: Level,
}

fn default_start_level() -> Level {
    Level::Entity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionInput {
    /// Mask index in the previous step.
    Index(usize),
    /// Mask index in an earlier step.
    Step { step: usize, index: usize },
    /// A user-drawn prompt.
    Prompt(PromptInput),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillRequest {
    pub selection: SelectionInput,
    pub level: Level,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrillResponse {
    pub session_id: String,
    pub step_index: usize,
    pub step: DrillStep,
}

/// Full session state. `session` deserializes back into a replayable drill-down session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    /// Unix seconds.
    pub created_at: u64,
    pub expires_at: u64,
    pub session: aims_core::inference::DrillDownSession,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint_id: String,
    pub step: usize,
    pub levels: Vec<Level>,
    pub queries: std::collections::BTreeMap<Level, usize>,
    pub keep_threshold: f64,
    pub assoc_threshold: f64,
    pub config: aims_core::ModelConfig,
}
