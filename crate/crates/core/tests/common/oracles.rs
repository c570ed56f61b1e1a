//! Brute-force reference implementations, written independently of the library code.

use aims_core::autograd::{Matrix, Tape};
use aims_core::association::association_bce;
use aims_core::eval::metrics::{association_recall_at_k, average_precision_at, iou_thresholds, ImageDetections, ImageLinks};
use aims_core::training::losses::{dice_loss, level_loss, mask_bce_loss, matching_cost, ness_ce_loss};
use aims_core::training::{hungarian_match, TermWeights};
use aims_core::Mask;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `−[y·ln σ(x) + (1−y)·ln(1−σ(x))]` evaluated literally.
fn bce(x: f64, y: f64) -> f64 {
    -(y * sig(x).ln() + (1.0 - y) * (1.0 - sig(x)).ln())
}

/// Minimum total cost over every injective assignment of the smaller side.
pub fn exhaustive_assignment(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let (rows, cols, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if n <= m {
        (n, m, Box::new(|r, c| cost[[r, c]]))
    } else {
        (m, n, Box::new(|r, c| cost[[c, r]]))
    };
    fn rec(r: usize, rows: usize, used: &mut Vec<bool>, acc: f64, get: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if r == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                rec(r + 1, rows, used, acc + get(r, c), get, best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, rows, &mut vec![false; cols], 0.0, &*get, &mut best);
    if rows == 0 {
        0.0
    } else {
        best
    }
}

pub fn check_hungarian(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let integer = i % 2 == 0;
        let cost = Array2::from_shape_fn((n, m), |_| {
            if integer {
                rng.random_range(0..10) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let got = hungarian_match(&cost).map_err(|e| format!("instance {i}: {e}"))?;
        if got.pairs.len() != n.min(m) {
            return Err(format!("instance {i}: {} pairs for a {n}x{m} cost", got.pairs.len()));
        }
        let mut rows: Vec<usize> = got.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = got.pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort();
        cols.dedup();
        if rows.len() != n.min(m) || cols.len() != n.min(m) {
            return Err(format!("instance {i}: assignment is not one-to-one"));
        }
        let total: f64 = got.pairs.iter().map(|&(r, c)| cost[[r, c]]).sum();
        let diff = (total - exhaustive_assignment(&cost)).abs();
        worst = worst.max(diff);
        if diff > 1e-9 {
            return Err(format!("instance {i} ({n}x{m}): total {total} vs exhaustive optimum differs by {diff}"));
        }
    }
    Ok(format!("{instances} instances, max |Δ| {worst:.1e}"))
}

/// Random rectangle inside an 8×8 frame.
pub fn random_box(rng: &mut ChaCha8Rng) -> Mask {
    let (y0, x0) = (rng.random_range(0..6), rng.random_range(0..6));
    let (h, w) = (rng.random_range(1..=8 - y0), rng.random_range(1..=8 - x0));
    Mask::from_fn(8, 8, |y, x| y >= y0 && y < y0 + h && x >= x0 && x < x0 + w)
}

fn iou(a: &Mask, b: &Mask) -> f64 {
    let mut inter = 0;
    let mut union = 0;
    for (p, q) in a.bits().iter().zip(b.bits()) {
        inter += (*p && *q) as usize;
        union += (*p || *q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// AP by the textbook definition: at each of 101 recall levels, the maximum precision over
/// every ranking cutoff whose recall reaches that level.
pub fn brute_ap(images: &[ImageDetections], threshold: f64) -> Option<f64> {
    let n_gt: usize = images.iter().map(|im| im.ground_truths.len()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = Vec::new();
    for im in images {
        let mut order: Vec<usize> = (0..im.predictions.len()).collect();
        order.sort_by(|&a, &b| im.predictions[b].0.partial_cmp(&im.predictions[a].0).unwrap().then(a.cmp(&b)));
        let mut used = vec![false; im.ground_truths.len()];
        for p in order {
            let mut best = None;
            let mut best_iou = threshold;
            for (g, gt) in im.ground_truths.iter().enumerate() {
                let v = iou(&im.predictions[p].1, gt);
                if !used[g] && v >= best_iou && best.is_none_or(|_| v > best_iou) {
                    best = Some(g);
                    best_iou = v;
                }
            }
            if let Some(g) = best {
                used[g] = true;
            }
            all.push((im.predictions[p].0, best.is_some()));
        }
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut curve = Vec::new();
    let mut tp = 0;
    for (i, &(_, hit)) in all.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        total += curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max);
    }
    Some(total / 101.0)
}

pub fn random_detections(rng: &mut ChaCha8Rng) -> Vec<ImageDetections> {
    (0..rng.random_range(1..=3))
        .map(|_| {
            let gts: Vec<Mask> = (0..rng.random_range(0..=5)).map(|_| random_box(rng)).collect();
            let mut predictions = Vec::new();
            for _ in 0..rng.random_range(0..=10) {
                // Half the predictions perturb a ground truth so matches actually happen.
                let mask = if !gts.is_empty() && rng.random_bool(0.5) {
                    let mut m = gts[rng.random_range(0..gts.len())].clone();
                    m.set(rng.random_range(0..8), rng.random_range(0..8), rng.random_bool(0.5));
                    m
                } else {
                    random_box(rng)
                };
                predictions.push((rng.random_range(0.0..1.0), mask));
            }
            ImageDetections { predictions, ground_truths: gts }
        })
        .collect()
}

pub fn check_average_precision(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for i in 0..instances {
        let images = random_detections(&mut rng);
        for t in iou_thresholds() {
            let got = average_precision_at(&images, t);
            let want = brute_ap(&images, t);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => {
                    if !(0.0..=1.0).contains(&g) {
                        return Err(format!("instance {i}: AP {g} outside [0, 1]"));
                    }
                    worst = worst.max((g - w).abs());
                    compared += 1;
                    if (g - w).abs() > 1e-6 {
                        return Err(format!("instance {i} IoU {t:.2}: AP {g} vs brute force {w}"));
                    }
                }
                other => return Err(format!("instance {i}: applicability differs {other:?}")),
            }
        }
    }
    Ok(format!("{compared} AP values over {instances} instances, max |Δ| {worst:.1e}"))
}

/// Recall by set membership over the top-`k` links.
pub fn brute_recall(images: &[ImageLinks], k: usize) -> Option<f64> {
    let (mut hit, mut total) = (0, 0);
    for im in images {
        let mut scored: Vec<(f64, usize, usize)> = im.predicted.clone();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        scored.truncate(k);
        for &(gc, gf) in &im.ground_truth {
            total += 1;
            let found = scored.iter().any(|&(_, c, f)| im.coarse_match[c] == Some(gc) && im.fine_match[f] == Some(gf));
            hit += found as usize;
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

pub fn random_links(rng: &mut ChaCha8Rng) -> Vec<ImageLinks> {
    (0..rng.random_range(1..=3))
        .map(|_| {
            let (nc, nf) = (rng.random_range(1..=4), rng.random_range(1..=6));
            let (gc, gf) = (rng.random_range(1..=3), rng.random_range(1..=5));
            let mut ground_truth = Vec::new();
            for f in 0..gf {
                ground_truth.push((rng.random_range(0..gc), f));
            }
            let pick = |rng: &mut ChaCha8Rng, g: usize| rng.random_bool(0.7).then(|| rng.random_range(0..g));
            let coarse_match = (0..nc).map(|_| pick(rng, gc)).collect();
            let fine_match = (0..nf).map(|_| pick(rng, gf)).collect();
            let predicted = (0..rng.random_range(0..=10))
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0..nc), rng.random_range(0..nf)))
                .collect();
            ImageLinks { predicted, ground_truth, coarse_match, fine_match }
        })
        .collect()
}

pub fn check_association_recall(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for i in 0..instances {
        let images = random_links(&mut rng);
        for k in [0, 1, 3, 100] {
            let (got, want) = (association_recall_at_k(&images, k), brute_recall(&images, k));
            if got.is_some_and(|g| !(0.0..=1.0).contains(&g)) {
                return Err(format!("instance {i}: AR {got:?} outside [0, 1]"));
            }
            let same = match (got, want) {
                (Some(g), Some(w)) => (g - w).abs() <= 1e-6,
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(format!("instance {i} k={k}: AR {got:?} vs brute force {want:?}"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} AR values over {instances} instances"))
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(p))
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<f64, String> {
    let d = (got - want).abs();
    if d > tol * want.abs().max(1.0) {
        return Err(format!("{name}: {got} vs scalar recomputation {want}"));
    }
    Ok(d)
}

/// Every loss formula against an element-by-element recomputation.
pub fn check_losses(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let w = TermWeights { ce: 2.0, bce: 5.0, dice: 5.0 };
    for _ in 0..instances {
        let (h, wd) = (rng.random_range(2..6), rng.random_range(2..6));
        let p = h * wd;
        let region = {
            let mut r = random_mask(&mut rng, h, wd, 0.7);
            r.set(0, 0, true);
            r
        };
        let target = random_mask(&mut rng, h, wd, 0.4);
        let logits: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
        let probs: Vec<f64> = logits.iter().map(|&x| sig(x)).collect();
        let inside: Vec<usize> = (0..p).filter(|&i| region.bits()[i]).collect();
        let y = |i: usize| target.bits()[i] as u8 as f64;

        let want_bce = inside.iter().map(|&i| bce(logits[i], y(i))).sum::<f64>() / inside.len() as f64;
        worst = worst.max(close("mask BCE", mask_bce_loss(&logits, &target, &region), want_bce, 1e-9)?);

        let inter: f64 = inside.iter().map(|&i| probs[i] * y(i)).sum();
        let sum_p: f64 = inside.iter().map(|&i| probs[i]).sum();
        let sum_g: f64 = inside.iter().map(|&i| y(i)).sum();
        let want_dice = 1.0 - (2.0 * inter + 1.0) / (sum_p + sum_g + 1.0);
        worst = worst.max(close("dice", dice_loss(&probs, &target, &region), want_dice, 1e-9)?);

        let n = rng.random_range(1..6);
        let ness: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let matched: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let uw = [1.0, 0.1, 0.5][rng.random_range(0..3)];
        let qw = |m: bool| if m { 1.0 } else { uw };
        let want_ce = (0..n).map(|q| qw(matched[q]) * bce(ness[q], matched[q] as u8 as f64)).sum::<f64>()
            / matched.iter().map(|&m| qw(m)).sum::<f64>();
        worst = worst.max(close("ness CE", ness_ce_loss(&ness, &matched, uw), want_ce, 1e-9)?);

        // Matching cost, element by element.
        let m = rng.random_range(1..4);
        let targets: Vec<Mask> = (0..m).map(|_| random_mask(&mut rng, h, wd, 0.4)).collect();
        let masks = Matrix::from_shape_fn((p, n), |_| rng.random_range(-4.0..4.0));
        let cost = matching_cost(&ness, &masks, &targets, &region, w);
        for q in 0..n {
            for (j, t) in targets.iter().enumerate() {
                let col: Vec<f64> = (0..p).map(|i| masks[[i, q]]).collect();
                let pr: Vec<f64> = col.iter().map(|&x| sig(x)).collect();
                let want = -w.ce * sig(ness[q]) + w.bce * mask_bce_ref(&col, t, &region) + w.dice * dice_ref(&pr, t, &region);
                worst = worst.max(close("matching cost", cost[[q, j]], want, 1e-9)?);
            }
        }

        // Association BCE through the tape.
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..6));
        let a_logits = Matrix::from_shape_fn((r, c), |_| rng.random_range(-5.0..5.0));
        let a_target = Matrix::from_shape_fn((r, c), |_| rng.random_bool(0.3) as u8 as f64);
        let store = aims_core::autograd::ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.constant(a_logits.clone());
        let got = association_bce(&mut tape, v, &a_target).map_err(|e| e.to_string())?;
        let want = a_logits.iter().zip(a_target.iter()).map(|(&x, &y)| bce(x, y)).sum::<f64>() / (r * c) as f64;
        worst = worst.max(close("association BCE", tape.scalar(got), want, 1e-9)?);

        // Level loss composes the three terms over a Hungarian matching.
        let matching = hungarian_match(&cost).map_err(|e| e.to_string())?;
        let mut tape = Tape::new(&store);
        let nv = tape.constant(Matrix::from_shape_vec((n, 1), ness.clone()).unwrap());
        let mv = tape.constant(masks.clone());
        let ll = level_loss(&mut tape, nv, mv, &targets, &region, &matching, w, uw);
        let is_matched: Vec<bool> = (0..n).map(|q| matching.pairs.iter().any(|p| p.0 == q)).collect();
        let k = matching.pairs.len() as f64;
        let mut mb = 0.0;
        let mut md = 0.0;
        for &(q, g) in &matching.pairs {
            let col: Vec<f64> = (0..p).map(|i| masks[[i, q]]).collect();
            let pr: Vec<f64> = col.iter().map(|&x| sig(x)).collect();
            mb += mask_bce_ref(&col, &targets[g], &region) / k;
            md += dice_ref(&pr, &targets[g], &region) / k;
        }
        let ce = (0..n).map(|q| qw(is_matched[q]) * bce(ness[q], is_matched[q] as u8 as f64)).sum::<f64>()
            / is_matched.iter().map(|&m| qw(m)).sum::<f64>();
        let want = w.ce * ce + w.bce * mb + w.dice * md;
        worst = worst.max(close("level loss", tape.scalar(ll.total), want, 1e-9)?);
    }
    Ok(format!("{instances} instances of 6 formulas, max |Δ| {worst:.1e}"))
}

fn mask_bce_ref(logits: &[f64], target: &Mask, region: &Mask) -> f64 {
    let idx: Vec<usize> = (0..logits.len()).filter(|&i| region.bits()[i]).collect();
    idx.iter().map(|&i| bce(logits[i], target.bits()[i] as u8 as f64)).sum::<f64>() / idx.len() as f64
}

fn dice_ref(probs: &[f64], target: &Mask, region: &Mask) -> f64 {
    let (mut i2, mut s) = (0.0, 0.0);
    for i in 0..probs.len() {
        if region.bits()[i] {
            let g = target.bits()[i] as u8 as f64;
            i2 += 2.0 * probs[i] * g;
            s += probs[i] + g;
        }
    }
    1.0 - (i2 + 1.0) / (s + 1.0)
}
