mod common;

use aims_core::data::{Corpus, HierScene};
use aims_core::AimsModel;
use common::invariants::{small_config, small_profile};
use common::prompting::*;

fn fixture() -> (AimsModel, Corpus) {
    let mut model = AimsModel::new(small_config(16, 6, 2)).unwrap();
    // Keep every query so that the checks see many masks.
    model.set_thresholds(0.0, 0.5).unwrap();
    let corpus = Corpus::build(&[small_profile("tiny", 3)], &[8], 1, 0.0).unwrap();
    (model, corpus)
}

fn scenes(corpus: &Corpus) -> Vec<&HierScene> {
    corpus.splits()[0].train.iter().collect()
}

#[test]
fn all_ones_prompt_reproduces_one_step_inference() {
    let (model, corpus) = fixture();
    let images: Vec<_> = scenes(&corpus).iter().take(4).map(|s| &s.image).collect();
    println!("{}", check_full_prompt_matches_one_step(&model, &images).unwrap());
}

#[test]
fn drill_down_masks_stay_inside_prompts() {
    let (model, corpus) = fixture();
    println!("{}", check_containment(&model, &scenes(&corpus), 100, 5).unwrap());
}

#[test]
fn recorded_sessions_replay_exactly() {
    let (model, corpus) = fixture();
    println!("{}", check_replay(&model, scenes(&corpus)[0], 6).unwrap());
}
