//! Identity / ablation invariants of the architecture and a finite-difference gradient check.

use aims_core::autograd::{Matrix, Tape};
use aims_core::data::{Corpus, DatasetProfile, Sampler, SceneParams};
use aims_core::model::encoder::Pyramid;
use aims_core::model::ModelConfig;
use aims_core::mpe::inject;
use aims_core::tcm::{concat_queries, split_queries};
use aims_core::training::{sample_objective, TrainConfig};
use aims_core::{AimsModel, Level, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::Check;

/// 32×32 model with every component, small enough for exhaustive checks.
pub fn small_config(channels: usize, queries: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        height: 32,
        width: 32,
        channels,
        heads: 2,
        ffn_hidden: 2 * channels,
        queries: [queries; 3],
        num_blocks: blocks,
        ..ModelConfig::toy()
    }
}

/// A 32×32 profile covering all three levels.
pub fn small_profile(name: &str, seed: u64) -> DatasetProfile {
    let mut p = DatasetProfile::new(name, &[Level::Part, Level::Entity, Level::Relation], 0.95, seed);
    p.scene = SceneParams { height: 32, width: 32, things: (2, 2), stuff: (2, 2), parts: (2, 2), thing_size: (9, 12), ..SceneParams::default() };
    p
}

pub fn small_corpus(scenes: usize, seed: u64) -> Corpus {
    Corpus::build(&[small_profile("tiny", 3)], &[scenes], seed, 0.0).expect("small profile is feasible")
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Matrix {
    Matrix::from_shape_fn((h * w, 3), |_| rng.random_range(0.0..1.0))
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// All per-level outputs of a forward pass, flattened for comparison.
fn outputs(model: &AimsModel, image: &Matrix, prompt: &Mask) -> Vec<Matrix> {
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, image, prompt, &Level::ALL).expect("forward");
    let mut v = Vec::new();
    for l in Level::ALL {
        let o = out.level(l).unwrap();
        v.push(tape.value(o.ness).clone());
        v.push(tape.value(o.masks).clone());
        v.push(tape.value(o.embeddings).clone());
    }
    for a in out.assoc.iter().flatten() {
        v.push(tape.value(*a).clone());
    }
    v
}

/// Zero-initialized fused branch: TCM-on equals TCM-off, and each block maps its inputs to themselves.
pub fn check_tcm_identity() -> Check {
    let on = small_config(16, 4, 3);
    let mut off = on.clone();
    off.tcm.enabled = false;
    let (m_on, m_off) = (AimsModel::new(on).unwrap(), AimsModel::new(off).unwrap());
    for (id, name, value) in m_off.params().iter() {
        let other = m_on.params().id(name).ok_or(format!("{name} missing with TCM on"))?;
        if m_on.params().get(other) != value {
            return Err(format!("{name} differs between TCM on and off"));
        }
        let _ = id;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let image = random_image(&mut rng, 32, 32);
    let prompt = Mask::full(32, 32);
    let mut worst = 0.0f64;
    for (a, b) in outputs(&m_on, &image, &prompt).iter().zip(outputs(&m_off, &image, &prompt)) {
        worst = worst.max(max_abs_diff(a, &b));
    }
    if worst > 1e-12 {
        return Err(format!("TCM on vs off differ by {worst:e}"));
    }
    let block = m_on.tcm_block(0, aims_core::LevelPair::EntityPart).ok_or("no TCM block")?;
    let mut tape = Tape::new(m_on.params());
    let a = tape.constant(Matrix::from_shape_fn((4, 16), |_| rng.random_range(-1.0..1.0)));
    let b = tape.constant(Matrix::from_shape_fn((4, 16), |_| rng.random_range(-1.0..1.0)));
    let (fa, fb) = block.forward(&mut tape, a, b).map_err(|e| e.to_string())?;
    let d = max_abs_diff(tape.value(fa), tape.value(a)).max(max_abs_diff(tape.value(fb), tape.value(b)));
    if d > 1e-12 {
        return Err(format!("zero-initialized block moves embeddings by {d:e}"));
    }
    Ok(format!("output |Δ| {worst:.1e}, block |Δ| {d:.1e}"))
}

/// With the prompt encoder zeroed, its pyramid is zero and decoding ignores the prompt bit for bit.
pub fn check_mpe_zero_identity() -> Check {
    let mut model = AimsModel::new(small_config(16, 4, 2)).unwrap();
    model.zero_params("mpe.");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let image = random_image(&mut rng, 32, 32);
    let half = Mask::from_fn(32, 32, |y, _| y < 16);
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, &image, &half, &Level::ALL).map_err(|e| e.to_string())?;
    for s in 2..=5 {
        if tape.value(out.prompt_features.get(s)).iter().any(|&v| v != 0.0) {
            return Err(format!("zeroed encoder yields a non-zero scale-{s} map"));
        }
    }
    let full = outputs(&model, &image, &Mask::full(32, 32));
    let part = outputs(&model, &image, &half);
    if full != part {
        return Err("decoding depends on the prompt through a zero pyramid".into());
    }
    Ok(format!("{} output tensors bit-identical", full.len()))
}

/// The full-image prompt pyramid does not depend on the image.
pub fn check_full_prompt_constancy() -> Check {
    let model = AimsModel::new(small_config(16, 4, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let full = Mask::full(32, 32);
    let mut maps: Vec<Vec<Matrix>> = Vec::new();
    for _ in 0..2 {
        let image = random_image(&mut rng, 32, 32);
        let mut tape = Tape::new(model.params());
        let out = model.forward(&mut tape, &image, &full, &[Level::Entity]).map_err(|e| e.to_string())?;
        maps.push((2..=5).map(|s| tape.value(out.prompt_features.get(s)).clone()).collect());
    }
    if maps[0] != maps[1] {
        return Err("full-prompt pyramid changed with the image".into());
    }
    Ok("identical pyramids for two images".into())
}

/// Injecting a pyramid and subtracting it again restores the features.
pub fn check_inject_inverse() -> Check {
    let model = AimsModel::new(small_config(16, 4, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let image = random_image(&mut rng, 32, 32);
    let prompt = Mask::from_fn(32, 32, |y, x| (y / 4 + x / 4) % 2 == 0);
    let mut tape = Tape::new(model.params());
    let out = model.forward(&mut tape, &image, &prompt, &[Level::Entity]).map_err(|e| e.to_string())?;
    let injected = inject(&mut tape, &out.features, &out.prompt_features).map_err(|e| e.to_string())?;
    let negated = Pyramid {
        maps: out.prompt_features.maps.map(|m| tape.scale(m, -1.0)),
        dims: out.prompt_features.dims,
    };
    let restored = inject(&mut tape, &injected, &negated).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for s in 2..=5 {
        worst = worst.max(max_abs_diff(tape.value(restored.get(s)), tape.value(out.features.get(s))));
    }
    if worst > 1e-12 {
        return Err(format!("uninject leaves |Δ| {worst:e}"));
    }
    let mut tape = Tape::new(model.params());
    let a = tape.constant(Matrix::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0)));
    let b = tape.constant(Matrix::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0)));
    let joined = concat_queries(&mut tape, a, b);
    let (sa, sb) = split_queries(&mut tape, joined, 3);
    if tape.value(sa) != tape.value(a) || tape.value(sb) != tape.value(b) {
        return Err("split does not invert concat".into());
    }
    Ok(format!("uninject |Δ| {worst:.1e}; split∘concat exact"))
}

/// Analytic gradients against central differences for every parameter tensor of a tiny model.
pub fn check_gradients(samples_per_tensor: usize) -> Check {
    let mut model = AimsModel::new(small_config(8, 2, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Perturb everything so zero-initialized branches carry gradient too.
    let ids: Vec<_> = model.params().ids().collect();
    for &id in &ids {
        for v in model.params_mut().get_mut(id).iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let corpus = small_corpus(6, 5);
    let sampler = Sampler::new(&corpus);
    let mut batch = Vec::new();
    let mut levels = std::collections::BTreeSet::new();
    let mut draws = 0;
    while levels.len() < 3 || batch.len() < 4 {
        let s = sampler.draw(&mut rng).ok_or("sampler is empty")?;
        draws += 1;
        if draws > 1000 {
            return Err("could not draw samples for all levels".into());
        }
        if levels.insert(s.supervision.active) || (batch.len() < 4 && !s.supervision.assoc.is_empty()) {
            batch.push(s);
        }
    }
    let cfg = TrainConfig::toy();
    let objective = |m: &AimsModel| -> f64 {
        batch
            .iter()
            .map(|s| {
                let mut tape = Tape::new(m.params());
                let (loss, _) = sample_objective(m, &mut tape, s, &cfg).expect("objective");
                tape.scalar(loss)
            })
            .sum()
    };
    let mut analytic = aims_core::autograd::Gradients::zeros_like(model.params());
    for s in &batch {
        let mut tape = Tape::new(model.params());
        let (loss, _) = sample_objective(&model, &mut tape, s, &cfg).map_err(|e| e.to_string())?;
        analytic.accumulate(&tape.backward(loss));
    }
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for &id in &ids {
        let g = analytic.get(id).cloned().unwrap_or_else(|| Matrix::zeros(model.params().get(id).dim()));
        let n = g.len();
        let largest = (0..n).max_by(|&a, &b| g.as_slice().unwrap()[a].abs().total_cmp(&g.as_slice().unwrap()[b].abs())).unwrap();
        let mut picks = vec![largest];
        picks.extend((1..samples_per_tensor).map(|_| rng.random_range(0..n)));
        for k in picks {
            let original = model.params().get(id).as_slice().unwrap()[k];
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[k] = original + eps;
            let up = objective(&model);
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[k] = original - eps;
            let down = objective(&model);
            model.params_mut().get_mut(id).as_slice_mut().unwrap()[k] = original;
            let numeric = (up - down) / (2.0 * eps);
            let a = g.as_slice().unwrap()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            checked += 1;
            if rel > 1e-3 {
                return Err(format!(
                    "{}[{k}]: analytic {a:e} vs numeric {numeric:e} (relative error {rel:.2e})",
                    model.params().name(id)
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("{} tensors, {checked} entries, max relative error {worst:.1e}", ids.len()))
}

/// Only the active decoder's prediction head receives gradient; association links reach the
/// linked decoder through its embeddings, never through its head.
pub fn check_supervision_isolation(samples: usize) -> Check {
    let mut model = AimsModel::new(small_config(8, 3, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ids: Vec<_> = model.params().ids().collect();
    for &id in &ids {
        for v in model.params_mut().get_mut(id).iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let corpus = small_corpus(6, 7);
    let sampler = Sampler::new(&corpus);
    let cfg = TrainConfig::toy();
    let mut linked = 0;
    for _ in 0..samples {
        let s = sampler.draw(&mut rng).ok_or("sampler is empty")?;
        let mut tape = Tape::new(model.params());
        let (loss, _) = sample_objective(&model, &mut tape, &s, &cfg).map_err(|e| e.to_string())?;
        let grads = tape.backward(loss);
        let active = s.supervision.active;
        for level in Level::ALL {
            let head = format!("decoder.{}.head.", level.name());
            let nonzero = model
                .params()
                .ids_with_prefix(&head)
                .any(|id| grads.get(id).is_some_and(|g| g.iter().any(|&v| v != 0.0)));
            if level != active && nonzero {
                return Err(format!("{level} head has gradient on a {active} sample"));
            }
            if level == active && !nonzero {
                return Err(format!("active {level} head has no gradient"));
            }
        }
        for (pair, links) in &s.supervision.assoc {
            let other = if pair.coarse() == active { pair.fine() } else { pair.coarse() };
            let q = model.params().id(&format!("decoder.{}.query", other.name())).ok_or("query parameter missing")?;
            if !links.is_empty() && grads.get(q).is_some_and(|g| g.iter().any(|&v| v != 0.0)) {
                linked += 1;
            }
        }
    }
    Ok(format!("{samples} samples, {linked} association links reach a linked decoder"))
}
