//! Set-prediction losses and matching costs.
//!
//! Mask logits are `P × N` (pixels × queries). All mask terms are restricted to a region
//! (the prompt), so pixels outside it contribute neither loss nor gradient.

use std::rc::Rc;

use ndarray::Array2;

use super::config::TermWeights;
use super::hungarian::MatchResult;
use crate::autograd::{sigmoid, softplus, Matrix, Tape, Var};
use crate::mask::Mask;

/// `1 − (2·Σpg + 1) / (Σp + Σg + 1)` over pixels inside `region`.
pub fn dice_loss(probs: &[f64], target: &Mask, region: &Mask) -> f64 {
    let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
    for (i, &p) in probs.iter().enumerate() {
        if region.bits()[i] {
            let g = target.bits()[i] as u8 as f64;
            inter += p * g;
            ps += p;
            gs += g;
        }
    }
    1.0 - (2.0 * inter + 1.0) / (ps + gs + 1.0)
}

/// Mean per-pixel binary cross-entropy inside `region`; 0 for an empty region.
pub fn mask_bce_loss(logits: &[f64], target: &Mask, region: &Mask) -> f64 {
    let n = region.count();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &x) in logits.iter().enumerate() {
        if region.bits()[i] {
            let y = target.bits()[i] as u8 as f64;
            total += softplus(x) - x * y;
        }
    }
    total / n as f64
}

/// Weighted mean binary cross-entropy of ness logits against matched (1) / unmatched (0);
/// unmatched queries carry weight `unmatched_weight`, matched ones 1.
pub fn ness_ce_loss(logits: &[f64], matched: &[bool], unmatched_weight: f64) -> f64 {
    let weight = |m: bool| if m { 1.0 } else { unmatched_weight };
    let norm: f64 = matched.iter().map(|&m| weight(m)).sum();
    if logits.is_empty() || norm == 0.0 {
        return 0.0;
    }
    let total: f64 =
        logits.iter().zip(matched).map(|(&x, &m)| weight(m) * (softplus(x) - if m { x } else { 0.0 })).sum();
    total / norm
}

/// `N × M` matching cost: `w_ce·(−p) + w_bce·BCE + w_dice·dice`, mask terms inside `region`.
pub fn matching_cost(ness: &[f64], masks: &Matrix, targets: &[Mask], region: &Mask, w: TermWeights) -> Array2<f64> {
    let (p, n) = masks.dim();
    let m = targets.len();
    if m == 0 {
        return Array2::zeros((n, 0));
    }
    let r: Vec<f64> = region.to_f64();
    let area = r.iter().sum::<f64>();
    // T: P × M targets inside the region.
    let t = Array2::from_shape_fn((p, m), |(i, j)| if targets[j].bits()[i] && r[i] != 0.0 { 1.0 } else { 0.0 });
    let x_in = Array2::from_shape_fn((p, n), |(i, q)| masks[[i, q]] * r[i]);
    let prob_in = Array2::from_shape_fn((p, n), |(i, q)| sigmoid(masks[[i, q]]) * r[i]);
    let xt = x_in.t().dot(&t);
    let pt = prob_in.t().dot(&t);
    let sp: Vec<f64> = (0..n).map(|q| (0..p).filter(|&i| r[i] != 0.0).map(|i| softplus(masks[[i, q]])).sum()).collect();
    let ps: Vec<f64> = (0..n).map(|q| prob_in.column(q).sum()).collect();
    let gs: Vec<f64> = (0..m).map(|j| t.column(j).sum()).collect();
    Array2::from_shape_fn((n, m), |(q, j)| {
        let bce = if area > 0.0 { (sp[q] - xt[[q, j]]) / area } else { 0.0 };
        let dice = 1.0 - (2.0 * pt[[q, j]] + 1.0) / (ps[q] + gs[j] + 1.0);
        -w.ce * sigmoid(ness[q]) + w.bce * bce + w.dice * dice
    })
}

/// Per-level loss nodes (unweighted terms and the weighted total).
#[derive(Clone, Copy, Debug)]
pub struct LevelLoss {
    pub ce: Var,
    pub bce: Var,
    pub dice: Var,
    pub total: Var,
}

/// Ness, mask-BCE and dice losses for one level given a matching.
///
/// Mask terms are averaged over matched pairs and are 0 without any.
pub fn level_loss(
    tape: &mut Tape,
    ness: Var,
    masks: Var,
    targets: &[Mask],
    region: &Mask,
    matching: &MatchResult,
    w: TermWeights,
    unmatched_weight: f64,
) -> LevelLoss {
    let (p, n) = tape.shape(masks);
    let k = matching.pairs.len();
    let mut ness_t = Matrix::zeros((n, 1));
    let mut ness_w = Matrix::from_elem((n, 1), unmatched_weight);
    for &(q, _) in &matching.pairs {
        ness_t[[q, 0]] = 1.0;
        ness_w[[q, 0]] = 1.0;
    }
    let norm = ness_w.sum();
    if norm > 0.0 {
        ness_w /= norm;
    }
    let ce = tape.bce_logits(ness, Rc::new(ness_t), Rc::new(ness_w));
    let area = region.count();
    let r = Rc::new(Matrix::from_shape_vec((p, 1), region.to_f64()).expect("region length"));
    let (bce, dice) = if k == 0 {
        let zero = tape.constant(Matrix::zeros((1, 1)));
        (zero, zero)
    } else {
        let mut t = Matrix::zeros((p, n));
        let mut wgt = Matrix::zeros((p, n));
        let scale = if area > 0 { 1.0 / (area as f64 * k as f64) } else { 0.0 };
        let mut dice_terms = Vec::with_capacity(k);
        for &(q, g) in &matching.pairs {
            let target = &targets[g];
            for i in 0..p {
                if target.bits()[i] {
                    t[[i, q]] = 1.0;
                }
                if region.bits()[i] {
                    wgt[[i, q]] = scale;
                }
            }
            let col = tape.slice_cols(masks, q, 1);
            let tg = Rc::new(Matrix::from_shape_vec((p, 1), target.to_f64()).expect("target length"));
            dice_terms.push(tape.dice(col, tg, r.clone()));
        }
        let bce = tape.bce_logits(masks, Rc::new(t), Rc::new(wgt));
        let dice_sum = tape.sum_scalars(&dice_terms);
        (bce, tape.scale(dice_sum, 1.0 / k as f64))
    };
    let a = tape.scale(ce, w.ce);
    let b = tape.scale(bce, w.bce);
    let d = tape.scale(dice, w.dice);
    let total = tape.sum_scalars(&[a, b, d]);
    LevelLoss { ce, bce, dice, total }
}

/// Query-space association target: 1 where both queries are matched to linked ground truths.
pub fn association_target(
    n_coarse: usize,
    n_fine: usize,
    coarse: &MatchResult,
    fine: &MatchResult,
    links: &[(usize, usize)],
) -> Matrix {
    let mut t = Matrix::zeros((n_coarse, n_fine));
    let fine_of: Vec<Option<usize>> = fine.target_of(n_fine);
    for &(qc, gc) in &coarse.pairs {
        for (qf, gf) in fine_of.iter().enumerate() {
            if let Some(gf) = gf {
                if links.contains(&(gc, *gf)) {
                    t[[qc, qf]] = 1.0;
                }
            }
        }
    }
    t
}
