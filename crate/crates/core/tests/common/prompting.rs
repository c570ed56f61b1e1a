//! Prompt-mode equivalence, prompt containment and drill-down replay.

use aims_core::data::{HierScene, Image, MaskPrompt, PromptType};
use aims_core::inference::{one_step_inference, prompt_inference, DrillDownSession, Selection};
use aims_core::{AimsModel, Level, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::Check;

/// An all-ones prompt reproduces one-step inference pixel for pixel at every level.
pub fn check_full_prompt_matches_one_step(model: &AimsModel, images: &[&Image]) -> Check {
    let mut masks = 0;
    for (i, image) in images.iter().enumerate() {
        let one = one_step_inference(model, image).map_err(|e| e.to_string())?;
        let full = Mask::full(image.height(), image.width());
        for level in Level::ALL {
            for t in [PromptType::FullImage, PromptType::PartialImage] {
                let p = MaskPrompt { mask: full.clone(), prompt_type: t };
                let r = prompt_inference(model, image, &p, level).map_err(|e| e.to_string())?;
                if r.level(level) != one.level(level) {
                    return Err(format!("image {i}: {t} all-ones prompt differs from one-step at {level}"));
                }
            }
            masks += one.level(level).map_or(0, |r| r.len());
        }
    }
    Ok(format!("{} images, {masks} masks identical", images.len()))
}

/// A random prompt: an annotated mask, a rectangle, or a union of blobs.
pub fn random_prompt(scene: &HierScene, rng: &mut ChaCha8Rng) -> Mask {
    let (h, w) = (scene.height(), scene.width());
    match rng.random_range(0..3) {
        0 if !scene.entities.is_empty() => scene.entities[rng.random_range(0..scene.entities.len())].clone(),
        1 | 0 => {
            let (y0, x0) = (rng.random_range(0..h - 4), rng.random_range(0..w - 4));
            let (y1, x1) = (rng.random_range(y0 + 2..=h), rng.random_range(x0 + 2..=w));
            Mask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
        }
        _ => {
            let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
                .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), rng.random_range(3.0..12.0)))
                .collect();
            Mask::from_fn(h, w, |y, x| blobs.iter().any(|&(cy, cx, r)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) < r * r))
        }
    }
}

/// Runs `drills` random drill-down steps and checks every returned mask lies in its prompt.
/// Returns the number of masks checked.
pub fn check_containment(model: &AimsModel, scenes: &[&HierScene], drills: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut done = 0;
    while done < drills {
        let scene = scenes[rng.random_range(0..scenes.len())];
        let mut session = DrillDownSession::new("containment", scene.image.clone());
        session.start(model, Level::ALL[rng.random_range(0..3)]).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let level = Level::ALL[rng.random_range(0..3)];
            let prev = session.history.last().unwrap();
            let n = prev.result.level(prev.level).map_or(0, |r| r.len());
            let selection = if n > 0 && rng.random_bool(0.5) {
                Selection::Index(rng.random_range(0..n))
            } else {
                let mut m = random_prompt(scene, &mut rng);
                if m.is_empty() {
                    m.set(0, 0, true);
                }
                Selection::Mask(m)
            };
            let step = session.drill(model, selection, level).map_err(|e| e.to_string())?;
            for (l, r) in &step.result.levels {
                for (i, m) in r.masks.iter().enumerate() {
                    if !m.is_subset_of(&step.prompt.mask) || m.is_empty() {
                        return Err(format!("drill {done}: {l} mask {i} escapes its prompt or is empty"));
                    }
                    checked += 1;
                }
            }
            done += 1;
        }
    }
    Ok(format!("{done} drills, {checked} masks inside their prompts"))
}

/// Replaying a recorded session reproduces every step exactly.
pub fn check_replay(model: &AimsModel, scene: &HierScene, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = DrillDownSession::new("replay", scene.image.clone());
    session.start(model, Level::Entity).map_err(|e| e.to_string())?;
    for k in 0..4 {
        let n = session.history.last().unwrap().result.level(session.history.last().unwrap().level).map_or(0, |r| r.len());
        let level = [Level::Part, Level::Entity, Level::Relation][k % 3];
        let selection = if n > 0 && k % 2 == 0 {
            Selection::Index(rng.random_range(0..n))
        } else {
            Selection::Mask(random_prompt(scene, &mut rng).or(&Mask::from_fn(scene.height(), scene.width(), |y, x| y == 0 && x == 0)))
        };
        session.drill(model, selection, level).map_err(|e| e.to_string())?;
    }
    let round: DrillDownSession =
        serde_json::from_str(&serde_json::to_string(&session).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let replayed = round.replay(model).map_err(|e| e.to_string())?;
    for (i, (a, b)) in session.history.iter().zip(&replayed).enumerate() {
        if &a.result != b {
            return Err(format!("step {i} differs on replay"));
        }
    }
    Ok(format!("{} steps replayed identically after a JSON round trip", replayed.len()))
}
