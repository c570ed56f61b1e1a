//! Cross-level association: projected-embedding similarity between adjacent levels.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Matrix, ParamStore, Tape, Var};
use crate::error::{AimsError, Result};
use crate::level::{Level, LevelPair};
use crate::nn::Linear;

/// One projection per level, indexed by [`Level::index`].
#[derive(Clone, Debug)]
pub struct AssociationHead {
    pub proj: [Linear; 3],
}

impl AssociationHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, c: usize) -> Self {
        AssociationHead { proj: Level::ALL.map(|l| Linear::new(store, rng, &format!("assoc.{}", l.name()), c, c)) }
    }

    /// `FC(E_coarse) · FC(E_fine)ᵀ`: `N_coarse × N_fine` logits.
    pub fn logits(&self, tape: &mut Tape, pair: LevelPair, coarse: Var, fine: Var) -> Result<Var> {
        let (wc, wf) = (tape.shape(coarse).1, tape.shape(fine).1);
        let c_in = tape.params().get(self.proj[pair.coarse().index()].weight).nrows();
        if wc != c_in || wf != c_in {
            return Err(AimsError::Shape(format!("embedding widths {wc}/{wf} do not match projection input {c_in}")));
        }
        let pc = self.proj[pair.coarse().index()].forward(tape, coarse);
        let pf = self.proj[pair.fine().index()].forward(tape, fine);
        Ok(tape.matmul_t(pc, pf))
    }
}

/// Element-mean binary cross-entropy between logits and a binary target.
pub fn association_bce(tape: &mut Tape, logits: Var, target: &Matrix) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape != target.dim() {
        return Err(AimsError::Shape(format!("association target {:?} vs logits {shape:?}", target.dim())));
    }
    let n = (shape.0 * shape.1).max(1) as f64;
    let weight = Matrix::from_elem(shape, 1.0 / n);
    Ok(tape.bce_logits(logits, target.clone().into(), weight.into()))
}

/// Binarized links between kept predictions of two adjacent levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub pair: LevelPair,
    /// Logits restricted to kept predictions, `kept_coarse × kept_fine`.
    pub scores: Vec<Vec<f64>>,
    pub links: Vec<Vec<bool>>,
}

/// Restricts `scores` to kept rows and columns; an entry is linked when
/// `sigmoid(score) ≥ threshold`, and every kept fine prediction is linked to its argmax row.
pub fn binarize_association(
    pair: LevelPair,
    scores: &Array2<f64>,
    kept_rows: &[usize],
    kept_cols: &[usize],
    threshold: f64,
) -> AssociationMatrix {
    let sub: Vec<Vec<f64>> = kept_rows.iter().map(|&r| kept_cols.iter().map(|&c| scores[[r, c]]).collect()).collect();
    let mut links: Vec<Vec<bool>> = sub.iter().map(|row| row.iter().map(|&s| sigmoid(s) >= threshold).collect()).collect();
    if !kept_rows.is_empty() {
        for j in 0..kept_cols.len() {
            let mut best = 0;
            for i in 1..kept_rows.len() {
                if sub[i][j] > sub[best][j] {
                    best = i;
                }
            }
            links[best][j] = true;
        }
    }
    AssociationMatrix { pair, scores: sub, links }
}
