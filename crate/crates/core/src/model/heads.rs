use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::nn::{LayerNorm, Linear};

/// Ness logit per query plus a mask embedding dotted with per-pixel features.
#[derive(Clone, Debug)]
pub struct PredHead {
    pub norm: LayerNorm,
    pub ness: Linear,
    pub mask_mlp: [Linear; 3],
}

impl PredHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        PredHead {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            ness: Linear::new(store, rng, &format!("{name}.ness"), c, 1),
            mask_mlp: [0, 1, 2].map(|i| Linear::new(store, rng, &format!("{name}.mask{i}"), c, c)),
        }
    }

    /// `(ness: N × 1, mask logits: P₂ × N)` from embeddings `N × C` and `F₂: P₂ × C`.
    pub fn forward(&self, tape: &mut Tape, embeddings: Var, f2: Var) -> (Var, Var) {
        let n = self.norm.forward(tape, embeddings);
        let ness = self.ness.forward(tape, n);
        let mut m = self.mask_mlp[0].forward(tape, embeddings);
        m = tape.relu(m);
        m = self.mask_mlp[1].forward(tape, m);
        m = tape.relu(m);
        m = self.mask_mlp[2].forward(tape, m);
        (ness, tape.matmul_t(f2, m))
    }
}
