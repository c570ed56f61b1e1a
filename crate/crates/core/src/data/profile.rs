use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{AimsError, Result};
use crate::level::Level;

/// Shape-grammar parameters for one dataset profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of object ("thing") entities per scene.
    pub things: (usize, usize),
    /// Inclusive range of background ("stuff") entities per scene, 2 or 3.
    pub stuff: (usize, usize),
    /// Inclusive range of primitives (parts) per thing, within 2..=4.
    pub parts: (usize, usize),
    /// Inclusive side-length range of a thing's bounding box, in pixels.
    pub thing_size: (usize, usize),
    /// Probability that a new thing is placed in contact with an earlier one.
    pub touch_probability: f64,
    pub grammar_seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 64,
            width: 64,
            things: (1, 3),
            stuff: (2, 3),
            parts: (2, 3),
            thing_size: (14, 24),
            touch_probability: 0.6,
            grammar_seed: 0,
        }
    }
}

/// A simulated source dataset: which levels it labels and how much of each image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub level_coverage: BTreeSet<Level>,
    pub annotation_area_fraction: f64,
    #[serde(default)]
    pub scene: SceneParams,
}

pub const MIN_PART_PIXELS: usize = 12;
pub const MIN_THING_GAP: usize = 3;

impl DatasetProfile {
    pub fn new(name: &str, levels: &[Level], annotation_area_fraction: f64, grammar_seed: u64) -> Self {
        DatasetProfile {
            name: name.to_string(),
            level_coverage: levels.iter().copied().collect(),
            annotation_area_fraction,
            scene: SceneParams { grammar_seed, ..SceneParams::default() },
        }
    }

    pub fn covers(&self, level: Level) -> bool {
        self.level_coverage.contains(&level)
    }

    /// Structural validity of the record itself.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AimsError::InvalidProfile(format!("{}: {msg}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty and path-safe".into());
        }
        if self.level_coverage.is_empty() {
            return bad("level coverage is empty".into());
        }
        if !(self.annotation_area_fraction > 0.0 && self.annotation_area_fraction <= 1.0) {
            return bad(format!("annotation area fraction {} outside (0, 1]", self.annotation_area_fraction));
        }
        let p = &self.scene;
        if p.height == 0 || p.width == 0 || p.height % 32 != 0 || p.width % 32 != 0 {
            return bad(format!("image size {}x{} must be positive multiples of 32", p.height, p.width));
        }
        if p.parts.0 < 2 || p.parts.1 > 4 || p.parts.0 > p.parts.1 {
            return bad(format!("parts range {:?} must lie within 2..=4", p.parts));
        }
        if !(2..=3).contains(&p.stuff.0) || !(2..=3).contains(&p.stuff.1) || p.stuff.0 > p.stuff.1 {
            return bad(format!("stuff range {:?} must lie within 2..=3", p.stuff));
        }
        if p.things.0 > p.things.1 || p.thing_size.0 > p.thing_size.1 || p.thing_size.0 < 8 {
            return bad("empty thing-count or thing-size range (minimum size 8)".into());
        }
        if !(0.0..=1.0).contains(&p.touch_probability) {
            return bad("touch probability outside [0, 1]".into());
        }
        Ok(())
    }

    /// Rejects profiles whose thing counts cannot be packed into the image.
    pub fn check_feasible(&self) -> Result<()> {
        self.validate()?;
        let p = &self.scene;
        let footprint = p.thing_size.0 + MIN_THING_GAP;
        let capacity = (p.height / footprint) * (p.width / footprint);
        let infeasible = |reason: String| {
            Err(AimsError::InfeasibleProfile { profile: self.name.clone(), reason })
        };
        if p.thing_size.1 + 2 > p.height.min(p.width) {
            return infeasible(format!("things up to {} px do not fit a {}x{} image", p.thing_size.1, p.height, p.width));
        }
        if p.things.1 > capacity / 2 {
            return infeasible(format!(
                "up to {} things of at least {} px cannot be placed in a {}x{} image",
                p.things.1, p.thing_size.0, p.height, p.width
            ));
        }
        Ok(())
    }
}

/// The five source datasets, with their level coverage and annotated-area fractions.
pub fn standard_profiles() -> Vec<DatasetProfile> {
    use Level::*;
    let mut paco = DatasetProfile::new("paco", &[Entity, Part], 0.084, 104);
    paco.scene.things = (1, 2);
    vec![
        DatasetProfile::new("coco", &[Entity], 0.891, 101),
        DatasetProfile::new("ppp", &[Entity, Part], 0.917, 102),
        DatasetProfile::new("psg", &[Entity, Relation], 0.904, 103),
        paco,
        DatasetProfile::new("entityseg", &[Entity], 0.999, 105),
    ]
}
