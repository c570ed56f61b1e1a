//! Task complementarity: two levels' query embeddings exchange information through a shared
//! self-attention and feed-forward over their concatenation.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{AimsError, Result};
use crate::nn::{Attention, FeedForward, LayerNorm};

#[derive(Clone, Debug)]
pub struct TcmBlock {
    pub attn: Attention,
    pub norm: LayerNorm,
    /// Final layer starts at zero so the exchange begins as the identity.
    pub ffn: FeedForward,
}

/// Stacks `a` over `b` along the query axis.
pub fn concat_queries(tape: &mut Tape, a: Var, b: Var) -> Var {
    tape.concat_rows(&[a, b])
}

/// Inverse of [`concat_queries`] given the first set's size.
pub fn split_queries(tape: &mut Tape, x: Var, n_a: usize) -> (Var, Var) {
    let total = tape.shape(x).0;
    (tape.slice_rows(x, 0, n_a), tape.slice_rows(x, n_a, total - n_a))
}

impl TcmBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, heads: usize, hidden: usize) -> Self {
        let attn = Attention::new(store, rng, &format!("{name}.attn"), c, heads);
        let norm = LayerNorm::new(store, &format!("{name}.norm"), c);
        let ffn = FeedForward::new(store, rng, &format!("{name}.ffn"), c, hidden);
        store.get_mut(ffn.fc2.weight).fill(0.0);
        TcmBlock { attn, norm, ffn }
    }

    /// Returns `(a + fused_a, b + fused_b)`.
    pub fn forward(&self, tape: &mut Tape, a: Var, b: Var) -> Result<(Var, Var)> {
        let (na, ca) = tape.shape(a);
        let (_, cb) = tape.shape(b);
        if ca != cb {
            return Err(AimsError::Shape(format!("query widths differ: {ca} vs {cb}")));
        }
        let x = concat_queries(tape, a, b);
        let att = self.attn.forward(tape, x, x, None);
        let x = tape.add(x, att);
        let x = self.norm.forward(tape, x);
        let fused = self.ffn.forward(tape, x);
        let (fa, fb) = split_queries(tape, fused, na);
        Ok((tape.add(a, fa), tape.add(b, fb)))
    }
}
