//! Structural checks on generated scenes and on the training sampler.

use std::collections::BTreeMap;

use aims_core::data::{generate_scene, standard_profiles, Corpus, PromptType, Sampler, SAMPLE_TABLE};
use aims_core::Mask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::oracles::Check;

/// Relative tolerance on the per-scene annotated-area fraction.
pub const AREA_TOLERANCE: f64 = 0.10;

fn union(masks: &[&Mask], h: usize, w: usize) -> Mask {
    let mut u = Mask::empty(h, w);
    for m in masks {
        for y in 0..h {
            for x in 0..w {
                if m.get(y, x) {
                    u.set(y, x, true);
                }
            }
        }
    }
    u
}

fn subset(a: &Mask, b: &Mask) -> bool {
    a.bits().iter().zip(b.bits()).all(|(&p, &q)| !p || q)
}

/// Generates `per_profile` scenes for each standard profile and checks every hierarchy invariant.
pub fn check_scenes(per_profile: usize) -> Check {
    let mut worst_area = 0.0f64;
    let mut total = 0;
    for profile in standard_profiles() {
        for seed in 0..per_profile as u64 {
            let s = generate_scene(&profile, seed).map_err(|e| format!("{} seed {seed}: {e}", profile.name))?;
            let (h, w) = (s.height(), s.width());
            let at = |what: &str| format!("{} seed {seed}: {what}", profile.name);
            for (i, p) in s.parts.iter().enumerate() {
                if p.owner >= s.entities.len() || !subset(&p.mask, &s.entities[p.owner]) {
                    return Err(at(&format!("part {i} is not inside its entity")));
                }
            }
            let g = s.assoc_ep();
            for c in 0..s.parts.len() {
                if g.column(c).iter().map(|&v| v as u32).sum::<u32>() != 1 {
                    return Err(at(&format!("entity-part column {c} does not sum to 1")));
                }
            }
            for (i, r) in s.relations.iter().enumerate() {
                let (a, b) = r.pair;
                if r.mask != union(&[&s.entities[a], &s.entities[b]], h, w) {
                    return Err(at(&format!("relation {i} is not the union of its pair")));
                }
            }
            let g = s.assoc_re();
            for r in 0..s.relations.len() {
                if g.row(r).iter().map(|&v| v as u32).sum::<u32>() != 2 {
                    return Err(at(&format!("relation-entity row {r} does not sum to 2")));
                }
            }
            let annotated = union(&s.entities.iter().collect::<Vec<_>>(), h, w);
            if annotated != s.annotated_region {
                return Err(at("annotated region is not the union of entities"));
            }
            let fraction = annotated.count() as f64 / (h * w) as f64;
            let rel = (fraction - profile.annotation_area_fraction).abs() / profile.annotation_area_fraction;
            if rel > AREA_TOLERANCE {
                return Err(at(&format!("area fraction {fraction:.3} vs {}", profile.annotation_area_fraction)));
            }
            worst_area = worst_area.max(rel);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for t in [PromptType::PartialImage, PromptType::OneEntity, PromptType::TwoEntities] {
                if let Ok(p) = aims_core::data::make_prompt(&s, t, &mut rng) {
                    if !subset(&p.mask, &s.annotated_region) {
                        return Err(at(&format!("{t} prompt leaves the annotated region")));
                    }
                }
            }
            total += 1;
        }
    }
    Ok(format!("{total} scenes, worst area deviation {:.1}%", 100.0 * worst_area))
}

/// Expected eligible profiles per sampling row for the standard profile set.
pub const ELIGIBILITY: [&[&str]; 8] = [
    &["coco", "ppp", "psg", "entityseg"],
    &["ppp"],
    &["psg"],
    &["coco", "ppp", "psg", "paco", "entityseg"],
    &["ppp", "paco"],
    &["psg"],
    &["ppp", "paco"],
    &["psg"],
];

fn chi_square_p(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let k = counts.len();
    if k < 2 {
        return 1.0;
    }
    let e = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat)
}

/// Sampler eligibility matches the table exactly and draws are uniform over rows and over each
/// row's profiles (chi-square p-value above `min_p`).
pub fn check_sampler(corpus: &Corpus, draws: usize, min_p: f64) -> Check {
    let sampler = Sampler::new(corpus);
    for (row, expect) in SAMPLE_TABLE.iter().zip(ELIGIBILITY) {
        let got = sampler.eligible_profiles(row.id);
        if got != expect {
            return Err(format!("row {} eligible {got:?}, expected {expect:?}", row.id));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rows = [0usize; 8];
    let mut per_row: BTreeMap<u8, BTreeMap<String, usize>> = BTreeMap::new();
    for _ in 0..draws {
        let s = sampler.draw(&mut rng).ok_or("sampler is empty")?;
        let row = SAMPLE_TABLE[s.spec.sample_id as usize - 1];
        if row.prompt_type != s.prompt.prompt_type || row.decoder_level != s.supervision.active {
            return Err(format!("sample {} carries the wrong prompt or level", row.id));
        }
        rows[row.id as usize - 1] += 1;
        *per_row.entry(row.id).or_default().entry(s.spec.source_profile.clone()).or_default() += 1;
    }
    let mut worst = chi_square_p(&rows);
    if worst <= min_p {
        return Err(format!("row counts {rows:?} are not uniform (p = {worst:.2e})"));
    }
    for (id, counts) in &per_row {
        let expect = ELIGIBILITY[*id as usize - 1];
        let c: Vec<usize> = expect.iter().map(|p| counts.get(*p).copied().unwrap_or(0)).collect();
        let p = chi_square_p(&c);
        if p <= min_p {
            return Err(format!("row {id} profile counts {c:?} are not uniform (p = {p:.2e})"));
        }
        worst = worst.min(p);
    }
    Ok(format!("{draws} draws, smallest p-value {worst:.3}"))
}
