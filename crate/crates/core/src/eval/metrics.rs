//! Class-agnostic mask AP (101-point interpolation over IoU 0.50:0.95) and association recall.

use serde::{Deserialize, Serialize};

use crate::mask::Mask;

pub const MAX_DETECTIONS: usize = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Mean over IoU 0.50:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Predictions (score, mask) and ground truths of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageDetections {
    pub predictions: Vec<(f64, Mask)>,
    pub ground_truths: Vec<Mask>,
}

/// Indices of predictions by descending score; ties keep input order.
fn score_order(preds: &[(f64, Mask)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0));
    idx
}

fn iou(a: &Mask, b: &Mask) -> f64 {
    a.iou(b).expect("prediction and ground truth share the image size")
}

/// Greedy one-to-one correspondence in descending score order: each prediction takes the
/// unmatched ground truth of highest IoU, if that IoU reaches `threshold`.
/// Returns the ground-truth index per prediction (input order).
pub fn greedy_correspondence(preds: &[(f64, Mask)], gts: &[Mask], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; preds.len()];
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p].1, gt);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[p] = Some(g);
        }
    }
    out
}

/// Area under the 101-point interpolated precision/recall curve. `hits` are (score, is_tp)
/// over all images; `n_gt` is the number of ground truths.
pub fn interpolated_ap(hits: &mut [(f64, bool)], n_gt: usize) -> f64 {
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0.0, 0.0);
    for &(_, hit) in hits.iter() {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        precision.push(tp / (tp + fp));
        recall.push(tp / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let pos = recall.partition_point(|&x| x < r);
        if pos < precision.len() {
            total += precision[pos];
        }
    }
    total / 101.0
}

/// AP at one IoU threshold; `None` without ground truths.
pub fn average_precision_at(images: &[ImageDetections], threshold: f64) -> Option<f64> {
    let n_gt: usize = images.iter().map(|im| im.ground_truths.len()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut hits = Vec::new();
    for im in images {
        let order = score_order(&im.predictions);
        let top: Vec<(f64, Mask)> =
            order.iter().take(MAX_DETECTIONS).map(|&i| im.predictions[i].clone()).collect();
        let corr = greedy_correspondence(&top, &im.ground_truths, threshold);
        hits.extend(top.iter().zip(&corr).map(|((s, _), c)| (*s, c.is_some())));
    }
    Some(interpolated_ap(&mut hits, n_gt))
}

/// AP over IoU 0.50:0.95 plus AP50 and AP75; `None` without ground truths.
pub fn average_precision(images: &[ImageDetections]) -> Option<ApResult> {
    let per: Vec<f64> = iou_thresholds().iter().map(|&t| average_precision_at(images, t)).collect::<Option<_>>()?;
    Some(ApResult { ap: per.iter().sum::<f64>() / per.len() as f64, ap50: per[0], ap75: per[5] })
}

/// Association links of one image for recall computation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageLinks {
    /// Predicted links `(score, coarse prediction, fine prediction)`.
    pub predicted: Vec<(f64, usize, usize)>,
    /// Ground-truth pairs `(coarse gt, fine gt)`.
    pub ground_truth: Vec<(usize, usize)>,
    /// Ground-truth index matched by each coarse / fine prediction.
    pub coarse_match: Vec<Option<usize>>,
    pub fine_match: Vec<Option<usize>>,
}

/// `(recalled, total)` ground-truth pairs among the top-`k` predicted links of one image.
pub fn recalled_pairs(links: &ImageLinks, k: usize) -> (usize, usize) {
    let mut order: Vec<usize> = (0..links.predicted.len()).collect();
    order.sort_by(|&a, &b| links.predicted[b].0.total_cmp(&links.predicted[a].0));
    let found: Vec<(usize, usize)> = order
        .iter()
        .take(k)
        .filter_map(|&i| {
            let (_, c, f) = links.predicted[i];
            Some((links.coarse_match[c]?, links.fine_match[f]?))
        })
        .collect();
    let recalled = links.ground_truth.iter().filter(|gt| found.contains(gt)).count();
    (recalled, links.ground_truth.len())
}

/// Micro-averaged recall of ground-truth pairs over images; `None` without any pair.
pub fn association_recall_at_k(images: &[ImageLinks], k: usize) -> Option<f64> {
    let (hit, total) = images.iter().map(|im| recalled_pairs(im, k)).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    (total > 0).then(|| hit as f64 / total as f64)
}
