//! Procedural hierarchical scenes.
//!
//! Background "stuff" bands tile the image; "things" are compounds of 2–4 primitives drawn on
//! top. Every entity (stuff or thing) is the union of its primitives, which are its parts.
//! Relations join things whose masks come within one pixel of touching. Partial annotation
//! drops whole entities until the profile's annotated-area fraction is met.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::profile::{DatasetProfile, SceneParams, MIN_PART_PIXELS, MIN_THING_GAP};
use super::scene::{HierScene, Image, Part, Relation};
use crate::error::{AimsError, Result};
use crate::level::Level;
use crate::mask::Mask;

const MAX_ATTEMPTS: u64 = 400;
const PLACEMENT_TRIES: usize = 60;
/// Relative slack used when picking the annotated subset; stricter than the ±10% contract.
const AREA_SLACK: f64 = 0.09;

pub fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the sequence
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = x ^ (x >> 31);
    }
    z
}

struct GeoEntity {
    mask: Mask,
    parts: Vec<Mask>,
    thing: bool,
    bbox: (usize, usize, usize, usize),
}

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
    Tee,
}

/// Deterministic scene for `(profile, seed)`.
pub fn generate_scene(profile: &DatasetProfile, seed: u64) -> Result<HierScene> {
    generate_scene_with_primitives(profile, seed).map(|(scene, _)| scene)
}

/// Like [`generate_scene`], also returning the rendered primitives of every annotated entity
/// (available even when the profile does not label parts).
pub fn generate_scene_with_primitives(profile: &DatasetProfile, seed: u64) -> Result<(HierScene, Vec<Vec<Mask>>)> {
    profile.check_feasible()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[profile.scene.grammar_seed, seed, attempt]));
        let Some(geometry) = build_geometry(&profile.scene, &mut rng) else { continue };
        let Some(keep) = choose_annotated(&geometry, profile.annotation_area_fraction, &mut rng) else {
            continue;
        };
        let image = render(&profile.scene, &geometry, &mut rng);
        let primitives = keep.iter().map(|&i| geometry[i].parts.clone()).collect();
        return Ok((assemble(profile, geometry, &keep, image), primitives));
    }
    Err(AimsError::InfeasibleProfile {
        profile: profile.name.clone(),
        reason: format!(
            "no scene met annotation fraction {} within {MAX_ATTEMPTS} attempts",
            profile.annotation_area_fraction
        ),
    })
}

fn rect_mask(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Mask {
    Mask::from_fn(h, w, |y, x| y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw)
}

/// Split `len` into `k` pieces of at least `min` each; returns cut offsets (k - 1 of them).
fn cut_points(rng: &mut ChaCha8Rng, len: usize, k: usize, min: usize) -> Option<Vec<usize>> {
    if len < k * min {
        return None;
    }
    let slack = len - k * min;
    let mut extra: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..=slack)).collect();
    extra.sort_unstable();
    Some(extra.iter().enumerate().map(|(i, e)| (i + 1) * min + e).collect())
}

fn build_geometry(p: &SceneParams, rng: &mut ChaCha8Rng) -> Option<Vec<GeoEntity>> {
    let (h, w) = (p.height, p.width);
    let mut entities = Vec::new();

    // stuff regions
    let n_stuff = rng.random_range(p.stuff.0..=p.stuff.1);
    let split_y = rng.random_range(h * 3 / 10..=h * 7 / 10);
    let mut regions = vec![(0, 0, split_y, w), (split_y, 0, h - split_y, w)];
    if n_stuff == 3 {
        let which = rng.random_range(0..2);
        let (y0, x0, rh, rw) = regions.remove(which);
        let sx = rng.random_range(rw * 3 / 10..=rw * 7 / 10);
        regions.push((y0, x0, rh, sx));
        regions.push((y0, x0 + sx, rh, rw - sx));
    }
    for &(y0, x0, rh, rw) in &regions {
        let parts = if rw >= rh {
            let cx = rng.random_range(rw * 3 / 10..=rw * 7 / 10);
            vec![rect_mask(h, w, y0, x0, rh, cx), rect_mask(h, w, y0, x0 + cx, rh, rw - cx)]
        } else {
            let cy = rng.random_range(rh * 3 / 10..=rh * 7 / 10);
            vec![rect_mask(h, w, y0, x0, cy, rw), rect_mask(h, w, y0 + cy, x0, rh - cy, rw)]
        };
        entities.push(GeoEntity { mask: rect_mask(h, w, y0, x0, rh, rw), parts, thing: false, bbox: (y0, x0, rh, rw) });
    }

    // things
    let n_things = rng.random_range(p.things.0..=p.things.1);
    let mut things: Vec<GeoEntity> = Vec::new();
    for _ in 0..n_things {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let Some((bh, bw, local)) = thing_shape(p, rng) else { continue };
            let touch = !things.is_empty() && rng.random_bool(p.touch_probability);
            let origin = if touch {
                let t = &things[rng.random_range(0..things.len())];
                touching_origin(t.bbox, bh, bw, h, w, rng)
            } else {
                Some((rng.random_range(0..=h - bh), rng.random_range(0..=w - bw)))
            };
            let Some((y0, x0)) = origin else { continue };
            let parts: Vec<Mask> = local
                .iter()
                .map(|lm| Mask::from_fn(h, w, |y, x| {
                    y >= y0 && x >= x0 && y < y0 + bh && x < x0 + bw && lm.get(y - y0, x - x0)
                }))
                .collect();
            let mut mask = Mask::empty(h, w);
            for pm in &parts {
                mask.or_assign(pm);
            }
            let clash = things.iter().any(|t| {
                if t.mask.intersection_count(&mask) > 0 {
                    return true;
                }
                // non-touching placements keep a clear gap
                !touch && t.mask.dilate(MIN_THING_GAP).intersection_count(&mask) > 0
            });
            if !clash {
                placed = Some(GeoEntity { mask, parts, thing: true, bbox: (y0, x0, bh, bw) });
                break;
            }
        }
        things.push(placed?);
    }

    // stuff sits behind things
    let mut occupied = Mask::empty(h, w);
    for t in &things {
        occupied.or_assign(&t.mask);
    }
    for e in entities.iter_mut() {
        e.mask = e.mask.and_not(&occupied);
        for pm in e.parts.iter_mut() {
            *pm = pm.and_not(&occupied);
            if pm.count() < MIN_PART_PIXELS {
                return None;
            }
        }
    }
    entities.extend(things);
    Some(entities)
}

/// Local masks (bbox-sized) of one thing's primitives.
fn thing_shape(p: &SceneParams, rng: &mut ChaCha8Rng) -> Option<(usize, usize, Vec<Mask>)> {
    let bh = rng.random_range(p.thing_size.0..=p.thing_size.1);
    let bw = rng.random_range(p.thing_size.0..=p.thing_size.1);
    let k = rng.random_range(p.parts.0..=p.parts.1);
    let shape = [Shape::Rect, Shape::Ellipse, Shape::Tee][rng.random_range(0..3)];
    let base = match shape {
        Shape::Rect | Shape::Tee => Mask::full(bh, bw),
        Shape::Ellipse => {
            let (cy, cx) = (bh as f64 / 2.0, bw as f64 / 2.0);
            Mask::from_fn(bh, bw, |y, x| {
                let dy = (y as f64 + 0.5 - cy) / cy;
                let dx = (x as f64 + 0.5 - cx) / cx;
                dy * dy + dx * dx <= 1.0
            })
        }
    };
    let parts = match shape {
        Shape::Rect | Shape::Ellipse => {
            let along_rows = bh >= bw;
            let len = if along_rows { bh } else { bw };
            let cuts = cut_points(rng, len, k, 4)?;
            let mut bounds = vec![0];
            bounds.extend(cuts);
            bounds.push(len);
            bounds
                .windows(2)
                .map(|win| {
                    Mask::from_fn(bh, bw, |y, x| {
                        let t = if along_rows { y } else { x };
                        t >= win[0] && t < win[1] && base.get(y, x)
                    })
                })
                .collect::<Vec<_>>()
        }
        Shape::Tee => {
            let bar = rng.random_range(4..=(bh / 2).max(4));
            let stem_w = rng.random_range((bw / 3).max(4)..=(bw / 2).max(4));
            let sx = (bw - stem_w) / 2;
            let stem_len = bh - bar;
            let mut parts = vec![Mask::from_fn(bh, bw, |y, _| y < bar)];
            let cuts = cut_points(rng, stem_len, k - 1, 4)?;
            let mut bounds = vec![0];
            bounds.extend(cuts);
            bounds.push(stem_len);
            for win in bounds.windows(2) {
                parts.push(Mask::from_fn(bh, bw, |y, x| {
                    y >= bar + win[0] && y < bar + win[1] && x >= sx && x < sx + stem_w
                }));
            }
            parts
        }
    };
    if parts.iter().any(|m| m.count() < MIN_PART_PIXELS) {
        return None;
    }
    Some((bh, bw, parts))
}

fn touching_origin(
    bbox: (usize, usize, usize, usize),
    bh: usize,
    bw: usize,
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, usize)> {
    let (ty, tx, th, tw) = (bbox.0 as i64, bbox.1 as i64, bbox.2 as i64, bbox.3 as i64);
    let (bh, bw) = (bh as i64, bw as i64);
    let overlap = 6;
    let (y, x) = match rng.random_range(0..4) {
        0 => (rng.random_range(ty - bh + overlap..=ty + th - overlap), tx + tw),
        1 => (rng.random_range(ty - bh + overlap..=ty + th - overlap), tx - bw),
        2 => (ty + th, rng.random_range(tx - bw + overlap..=tx + tw - overlap)),
        _ => (ty - bh, rng.random_range(tx - bw + overlap..=tx + tw - overlap)),
    };
    (y >= 0 && x >= 0 && y + bh <= h as i64 && x + bw <= w as i64).then_some((y as usize, x as usize))
}

/// Indices of annotated entities: among subsets whose area fraction is within
/// [`AREA_SLACK`] of the target, those dropping the fewest entities, chosen uniformly.
fn choose_annotated(geometry: &[GeoEntity], target: f64, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let n = geometry.len();
    let total = geometry[0].mask.len() as f64;
    let areas: Vec<usize> = geometry.iter().map(|e| e.mask.count()).collect();
    let (lo, hi) = (target * (1.0 - AREA_SLACK), target * (1.0 + AREA_SLACK));
    if n > 16 {
        return None;
    }
    let mut best: Vec<u32> = Vec::new();
    let mut best_size = 0;
    for subset in 1u32..(1 << n) {
        let area: usize = (0..n).filter(|i| subset & (1 << i) != 0).map(|i| areas[i]).sum();
        let frac = area as f64 / total;
        if frac < lo || frac > hi {
            continue;
        }
        let size = subset.count_ones();
        if size > best_size {
            best_size = size;
            best.clear();
        }
        if size == best_size {
            best.push(subset);
        }
    }
    let subset = *best.choose(rng)?;
    Some((0..n).filter(|i| subset & (1 << i) != 0).collect())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn render(p: &SceneParams, geometry: &[GeoEntity], rng: &mut ChaCha8Rng) -> Image {
    let mut image = Image::filled(p.height, p.width, [0, 0, 0]);
    let hue0: f64 = rng.random();
    for (i, e) in geometry.iter().enumerate() {
        let hue = hue0 + i as f64 * 0.618_033_988_75;
        let (sat, lo, hi) = if e.thing { (0.85, 0.45, 0.95) } else { (0.3, 0.35, 0.6) };
        let k = e.parts.len();
        let mut values: Vec<f64> =
            (0..k).map(|j| lo + (hi - lo) * j as f64 / (k.max(2) - 1) as f64).collect();
        values.shuffle(rng);
        for (pm, &v) in e.parts.iter().zip(&values) {
            let rgb = hsv_to_rgb(hue, sat, v);
            for y in 0..p.height {
                for x in 0..p.width {
                    if pm.get(y, x) {
                        let px = rgb.map(|c| {
                            let noise: f64 = rng.random_range(-0.02..0.02);
                            ((c + noise).clamp(0.0, 1.0) * 255.0).round() as u8
                        });
                        image.set_pixel(y, x, px);
                    }
                }
            }
        }
    }
    image
}

fn assemble(profile: &DatasetProfile, geometry: Vec<GeoEntity>, keep: &[usize], image: Image) -> HierScene {
    let (h, w) = (profile.scene.height, profile.scene.width);
    let mut new_index = vec![None; geometry.len()];
    for (ni, &gi) in keep.iter().enumerate() {
        new_index[gi] = Some(ni);
    }
    let entities: Vec<Mask> = keep.iter().map(|&gi| geometry[gi].mask.clone()).collect();
    let mut annotated_region = Mask::empty(h, w);
    for e in &entities {
        annotated_region.or_assign(e);
    }
    let parts = if profile.covers(Level::Part) {
        keep.iter()
            .enumerate()
            .flat_map(|(ni, &gi)| geometry[gi].parts.iter().map(move |m| Part { owner: ni, mask: m.clone() }))
            .collect()
    } else {
        Vec::new()
    };
    let mut relations = Vec::new();
    if profile.covers(Level::Relation) {
        for a in 0..geometry.len() {
            for b in a + 1..geometry.len() {
                if !(geometry[a].thing && geometry[b].thing) {
                    continue;
                }
                let (Some(na), Some(nb)) = (new_index[a], new_index[b]) else { continue };
                if geometry[a].mask.dilate(2).intersection_count(&geometry[b].mask) > 0 {
                    relations.push(Relation { pair: (na, nb), mask: geometry[a].mask.or(&geometry[b].mask) });
                }
            }
        }
    }
    HierScene { image, entities, parts, relations, annotated_region }
}
