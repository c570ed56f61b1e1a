//! One-step and prompt inference, drill-down sessions and input preprocessing.

pub mod preprocess;
pub mod session;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::association::{binarize_association, AssociationMatrix};
use crate::autograd::{sigmoid, Tape};
use crate::data::prompt::{MaskPrompt, PromptType};
use crate::data::sampler::SAMPLE_TABLE;
use crate::data::scene::Image;
use crate::error::{AimsError, Result};
use crate::level::{Level, LevelPair};
use crate::mask::Mask;
use crate::model::checkpoint::checkpoint_id;
use crate::model::AimsModel;

pub use preprocess::Letterbox;
pub use session::{DrillDownSession, DrillStep, PromptSource, Selection};

/// Kept predictions of one level, sorted by descending score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub masks: Vec<Mask>,
    pub scores: Vec<f64>,
    /// Decoder query that produced each kept mask.
    pub queries: Vec<usize>,
}

impl LevelResult {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_type: PromptType,
    pub levels: Vec<Level>,
    pub checkpoint_id: String,
    /// The (prompt type, level) combination is not one the model was trained on.
    pub out_of_distribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub levels: BTreeMap<Level, LevelResult>,
    /// Binarized links among kept predictions (one-step mode).
    pub associations: Vec<AssociationMatrix>,
    pub provenance: Provenance,
}

impl InferenceResult {
    pub fn level(&self, level: Level) -> Option<&LevelResult> {
        self.levels.get(&level)
    }

    pub fn association(&self, pair: LevelPair) -> Option<&AssociationMatrix> {
        self.associations.iter().find(|a| a.pair == pair)
    }
}

/// Whether some training row pairs this prompt type with this decoder level.
pub fn in_taxonomy(prompt_type: PromptType, level: Level) -> bool {
    SAMPLE_TABLE.iter().any(|r| r.prompt_type == prompt_type && r.decoder_level == level)
}

/// Raw per-level outputs of one forward pass, detached from the tape.
#[derive(Clone, Debug)]
pub struct RawOutput {
    /// Ness logits per level.
    pub ness: [Vec<f64>; 3],
    /// Full-resolution mask logits `P × N` per level.
    pub masks: [Array2<f64>; 3],
    /// Association logits per pair.
    pub assoc: [Array2<f64>; 2],
}

pub fn raw_forward(model: &AimsModel, image: &Image, prompt: &Mask) -> Result<RawOutput> {
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, &image.to_matrix(), prompt, &Level::ALL)?;
    let lv = |l: Level| out.level(l).expect("all levels run");
    Ok(RawOutput {
        ness: Level::ALL.map(|l| tape.value(lv(l).ness).column(0).to_vec()),
        masks: Level::ALL.map(|l| tape.value(lv(l).masks).clone()),
        assoc: LevelPair::ALL.map(|p| tape.value(out.assoc[p.index()].expect("all levels run")).clone()),
    })
}

/// Keep rule: `sigmoid(ness) > keep_threshold`, mask logits `> 0`, clipped to `prompt`,
/// non-empty after clipping. The score is the ness probability times the mean mask
/// probability over the kept pixels.
pub fn keep_predictions(raw: &RawOutput, level: Level, prompt: &Mask, keep_threshold: f64) -> LevelResult {
    let ness = &raw.ness[level.index()];
    let logits = &raw.masks[level.index()];
    let (h, w) = (prompt.height(), prompt.width());
    let mut kept: Vec<(f64, usize, Mask)> = Vec::new();
    for (q, &x) in ness.iter().enumerate() {
        let p = sigmoid(x);
        if p <= keep_threshold {
            continue;
        }
        let col = logits.column(q);
        let mask = Mask::from_fn(h, w, |y, xx| col[y * w + xx] > 0.0).and(prompt);
        if mask.is_empty() {
            continue;
        }
        let on: Vec<f64> = mask.bits().iter().zip(col.iter()).filter(|(b, _)| **b).map(|(_, &v)| sigmoid(v)).collect();
        kept.push((p * on.iter().sum::<f64>() / on.len() as f64, q, mask));
    }
    kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    LevelResult {
        scores: kept.iter().map(|k| k.0).collect(),
        queries: kept.iter().map(|k| k.1).collect(),
        masks: kept.into_iter().map(|k| k.2).collect(),
    }
}

fn check_image(model: &AimsModel, image: &Image) -> Result<()> {
    let c = model.config();
    if image.height() != c.height || image.width() != c.width {
        return Err(AimsError::Shape(format!(
            "image {}x{} does not match the model input {}x{}; preprocess it first",
            image.height(),
            image.width(),
            c.height,
            c.width
        )));
    }
    Ok(())
}

/// Full-image prompt; all three levels plus binarized association maps among kept predictions.
pub fn one_step_inference(model: &AimsModel, image: &Image) -> Result<InferenceResult> {
    check_image(model, image)?;
    let prompt = Mask::full(image.height(), image.width());
    let raw = raw_forward(model, image, &prompt)?;
    let keep = model.config().keep_threshold;
    let levels: BTreeMap<Level, LevelResult> =
        Level::ALL.iter().map(|&l| (l, keep_predictions(&raw, l, &prompt, keep))).collect();
    let associations = LevelPair::ALL
        .iter()
        .map(|&pair| {
            binarize_association(
                pair,
                &raw.assoc[pair.index()],
                &levels[&pair.coarse()].queries,
                &levels[&pair.fine()].queries,
                model.config().assoc_threshold,
            )
        })
        .collect();
    Ok(InferenceResult {
        levels,
        associations,
        provenance: Provenance {
            prompt_type: PromptType::FullImage,
            levels: Level::ALL.to_vec(),
            checkpoint_id: checkpoint_id(model),
            out_of_distribution: false,
        },
    })
}

/// Prompt-conditioned pass returning only `level`; every mask is clipped to the prompt.
pub fn prompt_inference(model: &AimsModel, image: &Image, prompt: &MaskPrompt, level: Level) -> Result<InferenceResult> {
    check_image(model, image)?;
    let prompt = MaskPrompt::new(prompt.mask.clone(), prompt.prompt_type, image.height(), image.width())?;
    let raw = raw_forward(model, image, &prompt.mask)?;
    let result = keep_predictions(&raw, level, &prompt.mask, model.config().keep_threshold);
    Ok(InferenceResult {
        levels: BTreeMap::from([(level, result)]),
        associations: vec![],
        provenance: Provenance {
            prompt_type: prompt.prompt_type,
            levels: vec![level],
            checkpoint_id: checkpoint_id(model),
            out_of_distribution: !in_taxonomy(prompt.prompt_type, level),
        },
    })
}

/// Inference on an image of any size: letterboxed into the model frame, masks mapped back.
/// Without `level` this is one-step inference; otherwise prompt inference at `level`, with a
/// full-image prompt when `prompt` is `None`.
pub fn segment(model: &AimsModel, image: &Image, prompt: Option<&MaskPrompt>, level: Option<Level>) -> Result<InferenceResult> {
    let c = model.config();
    let (h, w) = (image.height(), image.width());
    if let Some(p) = prompt {
        if p.mask.height() != h || p.mask.width() != w {
            return Err(AimsError::Shape(format!(
                "prompt {}x{} does not match the image {h}x{w}",
                p.mask.height(),
                p.mask.width()
            )));
        }
    }
    let lb = Letterbox::new(h, w, c.height, c.width);
    if lb.is_identity() {
        return match (prompt, level) {
            (None, None) => one_step_inference(model, image),
            (Some(_), None) => Err(AimsError::Config("a prompt needs a target level".into())),
            (p, Some(level)) => {
                let full = MaskPrompt::full(h, w);
                prompt_inference(model, image, p.unwrap_or(&full), level)
            }
        };
    }
    let framed = lb.apply(image);
    let mut result = match (prompt, level) {
        (None, None) => one_step_inference(model, &framed)?,
        (Some(_), None) => return Err(AimsError::Config("a prompt needs a target level".into())),
        (p, Some(level)) => {
            let prompt = match p {
                Some(p) => MaskPrompt::new(lb.mask_to_model(&p.mask), p.prompt_type, c.height, c.width)?,
                None => MaskPrompt::new(lb.mask_to_model(&Mask::full(h, w)), PromptType::FullImage, c.height, c.width)?,
            };
            prompt_inference(model, &framed, &prompt, level)?
        }
    };
    for r in result.levels.values_mut() {
        for m in r.masks.iter_mut() {
            *m = lb.mask_from_model(m);
            if let Some(p) = prompt {
                *m = m.and(&p.mask);
            }
        }
        if prompt.is_some() {
            let kept: Vec<usize> = (0..r.len()).filter(|&i| !r.masks[i].is_empty()).collect();
            *r = LevelResult {
                masks: kept.iter().map(|&i| r.masks[i].clone()).collect(),
                scores: kept.iter().map(|&i| r.scores[i]).collect(),
                queries: kept.iter().map(|&i| r.queries[i]).collect(),
            };
        }
    }
    Ok(result)
}
