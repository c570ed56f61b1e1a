use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::HierScene;
use crate::error::{AimsError, Result};
use crate::mask::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptType {
    FullImage,
    PartialImage,
    OneEntity,
    TwoEntities,
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptType::FullImage => "full_image",
            PromptType::PartialImage => "partial_image",
            PromptType::OneEntity => "one_entity",
            PromptType::TwoEntities => "two_entities",
        })
    }
}

/// Binary region the model is asked to segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPrompt {
    pub mask: Mask,
    pub prompt_type: PromptType,
}

impl MaskPrompt {
    pub fn full(height: usize, width: usize) -> Self {
        MaskPrompt { mask: Mask::full(height, width), prompt_type: PromptType::FullImage }
    }

    /// Rejects empty masks and size mismatches.
    pub fn new(mask: Mask, prompt_type: PromptType, height: usize, width: usize) -> Result<Self> {
        if mask.height() != height || mask.width() != width {
            return Err(AimsError::Shape(format!(
                "prompt {}x{} does not match image {height}x{width}",
                mask.height(),
                mask.width()
            )));
        }
        if mask.is_empty() {
            return Err(AimsError::EmptyPrompt);
        }
        Ok(MaskPrompt { mask, prompt_type })
    }
}

/// Builds a prompt of the requested type from a scene's annotations.
pub fn make_prompt(scene: &HierScene, prompt_type: PromptType, rng: &mut impl Rng) -> Result<MaskPrompt> {
    let (h, w) = (scene.height(), scene.width());
    let n = scene.entities.len();
    let mask = match prompt_type {
        PromptType::FullImage => Mask::full(h, w),
        PromptType::PartialImage => {
            if n == 0 {
                return Err(AimsError::PromptUnavailable("partial-image prompt needs an annotated entity".into()));
            }
            let k = rng.random_range(1..=n);
            let mut m = Mask::empty(h, w);
            for i in sample(rng, n, k) {
                m.or_assign(&scene.entities[i]);
            }
            m
        }
        PromptType::OneEntity => {
            if n == 0 {
                return Err(AimsError::PromptUnavailable("one-entity prompt needs an annotated entity".into()));
            }
            scene.entities[rng.random_range(0..n)].clone()
        }
        PromptType::TwoEntities => {
            if n < 2 || scene.relations.is_empty() {
                return Err(AimsError::PromptUnavailable("two-entity prompt needs an annotated relation".into()));
            }
            scene.relations[rng.random_range(0..scene.relations.len())].mask.clone()
        }
    };
    Ok(MaskPrompt { mask, prompt_type })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate::generate_scene;
    use crate::data::profile::standard_profiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prompt_types() {
        let profiles = standard_profiles();
        let psg = profiles.iter().find(|p| p.name == "psg").unwrap();
        let scene = (0..50).map(|s| generate_scene(psg, s).unwrap()).find(|s| !s.relations.is_empty()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = make_prompt(&scene, PromptType::FullImage, &mut rng).unwrap();
        assert_eq!(full.mask.count(), scene.height() * scene.width());
        let one = make_prompt(&scene, PromptType::OneEntity, &mut rng).unwrap();
        assert!(scene.entities.contains(&one.mask));
        let two = make_prompt(&scene, PromptType::TwoEntities, &mut rng).unwrap();
        assert!(scene.relations.iter().any(|r| r.mask == two.mask));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let partial = make_prompt(&scene, PromptType::PartialImage, &mut rng).unwrap();
        // exhaustive pixel containment
        for y in 0..scene.height() {
            for x in 0..scene.width() {
                assert!(!partial.mask.get(y, x) || scene.annotated_region.get(y, x));
            }
        }
    }

    #[test]
    fn unavailable_prompts() {
        let coco = standard_profiles().into_iter().find(|p| p.name == "coco").unwrap();
        let scene = generate_scene(&coco, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_prompt(&scene, PromptType::TwoEntities, &mut rng),
            Err(AimsError::PromptUnavailable(_))
        ));
        assert!(matches!(MaskPrompt::new(Mask::empty(64, 64), PromptType::PartialImage, 64, 64), Err(AimsError::EmptyPrompt)));
    }
}
