//! Per-level query decoder blocks with masked cross-attention.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{sigmoid, Matrix, ParamStore, Tape, Var};
use crate::nn::{Attention, FeedForward, LayerNorm};
use crate::resize::bilinear_map;

/// Cross-attention scale used by block `i` (0-based): 5, 4, 3, 5, 4, 3, ...
pub fn block_scale(i: usize) -> usize {
    [5, 4, 3][i % 3]
}

/// Which pixels of scale `(hs, ws)` each query may attend to.
///
/// `prev_logits` is `P₂ × N` over the `(h2, w2)` grid. Probabilities are bilinearly resampled to
/// the target grid and kept where `≥ threshold`; a query with no kept pixel attends everywhere.
pub fn build_attention_mask(prev_logits: &Matrix, h2: usize, w2: usize, hs: usize, ws: usize, threshold: f64) -> Array2<bool> {
    let probs = prev_logits.mapv(sigmoid);
    let down = bilinear_map(h2, w2, hs, ws).apply(&probs);
    let n = prev_logits.ncols();
    let mut mask = Array2::from_shape_fn((n, hs * ws), |(q, p)| down[[p, q]] >= threshold);
    for mut row in mask.rows_mut() {
        if !row.iter().any(|&b| b) {
            row.fill(true);
        }
    }
    mask
}

/// Additive attention bias: 0 where attended, `-inf` where blocked.
pub fn attention_bias(mask: &Array2<bool>) -> Matrix {
    mask.mapv(|b| if b { 0.0 } else { f64::NEG_INFINITY })
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub cross: Attention,
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, heads: usize, hidden: usize) -> Self {
        DecoderBlock {
            cross: Attention::new(store, rng, &format!("{name}.cross"), c, heads),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c),
            self_attn: Attention::new(store, rng, &format!("{name}.self"), c, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), c, hidden),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), c),
        }
    }

    /// Masked cross-attention over `memory` followed by self-attention.
    pub fn attend(&self, tape: &mut Tape, e: Var, memory: Var, bias: Option<Var>) -> Var {
        let x = self.cross.forward(tape, e, memory, bias);
        let e = tape.add(e, x);
        let e = self.norm1.forward(tape, e);
        let x = self.self_attn.forward(tape, e, e, None);
        let e = tape.add(e, x);
        self.norm2.forward(tape, e)
    }

    pub fn feed_forward(&self, tape: &mut Tape, e: Var) -> Var {
        let x = self.ffn.forward(tape, e);
        let e = tape.add(e, x);
        self.norm3.forward(tape, e)
    }
}
