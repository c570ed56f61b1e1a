//! Synthetic hierarchical scenes, dataset profiles, corpora and the training sampler.

pub mod corpus;
pub mod generate;
pub mod profile;
pub mod prompt;
pub mod sampler;
pub mod scene;

pub use corpus::{Corpus, ProfileSplit, DEFAULT_EVAL_FRACTION};
pub use generate::{generate_scene, generate_scene_with_primitives};
pub use profile::{standard_profiles, DatasetProfile, SceneParams};
pub use prompt::{make_prompt, MaskPrompt, PromptType};
pub use sampler::{sample_batch, SampleSpec, SampleType, Sampler, Supervision, TrainSample, SAMPLE_TABLE};
pub use scene::{HierScene, Image, Part, Relation};
