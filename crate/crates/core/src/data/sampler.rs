use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::profile::DatasetProfile;
use super::prompt::{make_prompt, MaskPrompt, PromptType};
use super::scene::HierScene;
use crate::level::{Level, LevelPair};
use crate::mask::Mask;

/// One row of the eight-way sampling table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleType {
    pub id: u8,
    pub prompt_type: PromptType,
    pub decoder_level: Level,
}

pub const SAMPLE_TABLE: [SampleType; 8] = [
    SampleType { id: 1, prompt_type: PromptType::FullImage, decoder_level: Level::Entity },
    SampleType { id: 2, prompt_type: PromptType::FullImage, decoder_level: Level::Part },
    SampleType { id: 3, prompt_type: PromptType::FullImage, decoder_level: Level::Relation },
    SampleType { id: 4, prompt_type: PromptType::PartialImage, decoder_level: Level::Entity },
    SampleType { id: 5, prompt_type: PromptType::PartialImage, decoder_level: Level::Part },
    SampleType { id: 6, prompt_type: PromptType::PartialImage, decoder_level: Level::Relation },
    SampleType { id: 7, prompt_type: PromptType::OneEntity, decoder_level: Level::Part },
    SampleType { id: 8, prompt_type: PromptType::TwoEntities, decoder_level: Level::Relation },
];

/// Minimum annotated-area fraction for a profile to serve full-image prompts.
/// Sparsely labelled images would teach the model that unlabelled objects are background.
pub const FULL_PROMPT_MIN_AREA: f64 = 0.5;

impl SampleType {
    pub fn by_id(id: u8) -> Option<SampleType> {
        SAMPLE_TABLE.iter().copied().find(|t| t.id == id)
    }

    /// Whether images from `profile` may be drawn for this row.
    pub fn accepts(&self, profile: &DatasetProfile) -> bool {
        let level_ok = match self.prompt_type {
            PromptType::OneEntity => profile.covers(Level::Entity) && profile.covers(self.decoder_level),
            PromptType::TwoEntities => profile.covers(Level::Entity) && profile.covers(Level::Relation),
            _ => profile.covers(self.decoder_level),
        };
        let area_ok = self.prompt_type != PromptType::FullImage
            || profile.annotation_area_fraction >= FULL_PROMPT_MIN_AREA;
        level_ok && area_ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub sample_id: u8,
    pub prompt_type: PromptType,
    pub decoder_level: Level,
    pub source_profile: String,
}

/// Ground truth for one sample, already restricted to the prompt.
///
/// `targets[level.index()]` is `Some` for the active level and for every level that takes part
/// in a supervised association pair. Only the active level receives segmentation losses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Supervision {
    pub active: Level,
    pub targets: [Option<Vec<Mask>>; 3],
    /// `(pair, links)` where links index `(coarse target, fine target)`.
    pub assoc: Vec<(LevelPair, Vec<(usize, usize)>)>,
}

impl Supervision {
    pub fn targets(&self, level: Level) -> Option<&[Mask]> {
        self.targets[level.index()].as_deref()
    }
}

#[derive(Clone, Debug)]
pub struct TrainSample<'a> {
    pub scene: &'a HierScene,
    pub spec: SampleSpec,
    pub prompt: MaskPrompt,
    pub supervision: Supervision,
}

/// Annotated items of `level` inside the prompt, with their scene indices.
fn items_in_prompt(scene: &HierScene, level: Level, prompt: &MaskPrompt) -> Vec<(usize, Mask)> {
    let masks: Vec<&Mask> = match level {
        // A two-entity prompt asks the relation decoder to split the merged region.
        Level::Relation if prompt.prompt_type == PromptType::TwoEntities => scene.entities.iter().collect(),
        Level::Relation => scene.relations.iter().map(|r| &r.mask).collect(),
        Level::Entity => scene.entities.iter().collect(),
        Level::Part => scene.parts.iter().map(|p| &p.mask).collect(),
    };
    masks
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.is_subset_of(&prompt.mask))
        .map(|(i, m)| (i, m.clone()))
        .collect()
}

/// Builds prompt-restricted targets and association links for a sample.
pub fn build_supervision(scene: &HierScene, profile: &DatasetProfile, active: Level, prompt: &MaskPrompt) -> Supervision {
    let mut items: [Option<Vec<(usize, Mask)>>; 3] = Default::default();
    items[active.index()] = Some(items_in_prompt(scene, active, prompt));
    let mut pairs = Vec::new();
    if prompt.prompt_type != PromptType::TwoEntities {
        for pair in LevelPair::ALL {
            if pair.contains(active) && profile.covers(pair.coarse()) && profile.covers(pair.fine()) {
                for level in [pair.coarse(), pair.fine()] {
                    if items[level.index()].is_none() {
                        items[level.index()] = Some(items_in_prompt(scene, level, prompt));
                    }
                }
                pairs.push(pair);
            }
        }
    }
    let assoc = pairs
        .into_iter()
        .map(|pair| {
            let coarse = items[pair.coarse().index()].as_ref().unwrap();
            let fine = items[pair.fine().index()].as_ref().unwrap();
            let mut links = Vec::new();
            for (ci, (cs, _)) in coarse.iter().enumerate() {
                for (fi, (fs, _)) in fine.iter().enumerate() {
                    let linked = match pair {
                        LevelPair::EntityPart => scene.parts[*fs].owner == *cs,
                        LevelPair::RelationEntity => {
                            let (a, b) = scene.relations[*cs].pair;
                            a == *fs || b == *fs
                        }
                    };
                    if linked {
                        links.push((ci, fi));
                    }
                }
            }
            (pair, links)
        })
        .collect();
    let targets = items.map(|o| o.map(|v| v.into_iter().map(|(_, m)| m).collect()));
    Supervision { active, targets, assoc }
}

fn supports(scene: &HierScene, prompt_type: PromptType) -> bool {
    match prompt_type {
        PromptType::FullImage => true,
        PromptType::PartialImage | PromptType::OneEntity => !scene.entities.is_empty(),
        PromptType::TwoEntities => !scene.relations.is_empty(),
    }
}

/// Draws training samples: sample type uniform over the rows with at least one eligible
/// profile, profile uniform among that row's eligible profiles, scene uniform among the
/// profile's training scenes that can produce the row's prompt.
pub struct Sampler<'c> {
    corpus: &'c Corpus,
    /// Per available row: the row and, per eligible profile, the usable scene indices.
    rows: Vec<(SampleType, Vec<(usize, Vec<usize>)>)>,
}

impl<'c> Sampler<'c> {
    pub fn new(corpus: &'c Corpus) -> Self {
        let mut rows = Vec::new();
        for row in SAMPLE_TABLE {
            let mut sources = Vec::new();
            for (pi, split) in corpus.splits().iter().enumerate() {
                if !row.accepts(&split.profile) {
                    continue;
                }
                let scenes: Vec<usize> = (0..split.train.len())
                    .filter(|&i| supports(&split.train[i], row.prompt_type))
                    .collect();
                if !scenes.is_empty() {
                    sources.push((pi, scenes));
                }
            }
            if !sources.is_empty() {
                rows.push((row, sources));
            }
        }
        Sampler { corpus, rows }
    }

    /// Sample ids this corpus can produce.
    pub fn available_ids(&self) -> Vec<u8> {
        self.rows.iter().map(|(r, _)| r.id).collect()
    }

    /// Eligible profile names for a row, in corpus order.
    pub fn eligible_profiles(&self, id: u8) -> Vec<&str> {
        self.rows
            .iter()
            .find(|(r, _)| r.id == id)
            .map(|(_, s)| s.iter().map(|(pi, _)| self.corpus.splits()[*pi].profile.name.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Option<TrainSample<'c>> {
        if self.rows.is_empty() {
            return None;
        }
        let (row, sources) = &self.rows[rng.random_range(0..self.rows.len())];
        let (pi, scenes) = &sources[rng.random_range(0..sources.len())];
        let split = &self.corpus.splits()[*pi];
        let scene = &split.train[scenes[rng.random_range(0..scenes.len())]];
        let prompt = make_prompt(scene, row.prompt_type, rng).expect("scene pre-filtered for prompt support");
        let supervision = build_supervision(scene, &split.profile, row.decoder_level, &prompt);
        Some(TrainSample {
            scene,
            spec: SampleSpec {
                sample_id: row.id,
                prompt_type: row.prompt_type,
                decoder_level: row.decoder_level,
                source_profile: split.profile.name.clone(),
            },
            prompt,
            supervision,
        })
    }
}

/// Draws `batch_size` independent samples. Empty when no row is available.
pub fn sample_batch<'c>(corpus: &'c Corpus, batch_size: usize, rng: &mut impl Rng) -> Vec<TrainSample<'c>> {
    let sampler = Sampler::new(corpus);
    (0..batch_size).map_while(|_| sampler.draw(rng)).collect()
}
