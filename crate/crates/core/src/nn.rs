//! Parameterized layers built on the tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Matrix, ParamId, ParamStore, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

pub fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

/// `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out));
        let bias = Some(store.add(format!("{name}.bias"), Matrix::zeros((1, fan_out))));
        Linear { weight, bias }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Matrix::zeros((fan_in, fan_out)));
        let bias = Some(store.add(format!("{name}.bias"), Matrix::zeros((1, fan_out))));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, width))),
            beta: store.add(format!("{name}.beta"), Matrix::zeros((1, width))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.layer_norm_rows(x, LN_EPS);
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Multi-head scaled dot-product attention with an optional additive bias (`-inf` blocks).
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, heads: usize) -> Self {
        assert!(width % heads == 0, "width {width} not divisible by {heads} heads");
        Attention {
            q: Linear::new(store, rng, &format!("{name}.q"), width, width),
            k: Linear::new(store, rng, &format!("{name}.k"), width, width),
            v: Linear::new(store, rng, &format!("{name}.v"), width, width),
            out: Linear::new(store, rng, &format!("{name}.out"), width, width),
            heads,
        }
    }

    /// `queries: N × C`, `memory: P × C`, `bias: N × P` (shared by all heads).
    pub fn forward(&self, tape: &mut Tape, queries: Var, memory: Var, bias: Option<Var>) -> Var {
        let q = self.q.forward(tape, queries);
        let k = self.k.forward(tape, memory);
        let v = self.v.forward(tape, memory);
        let width = tape.shape(q).1;
        let d = width / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * d, d);
            let kh = tape.slice_cols(k, h * d, d);
            let vh = tape.slice_cols(v, h * d, d);
            let scores = tape.matmul_t(qh, kh);
            let mut scores = tape.scale(scores, scale);
            if let Some(b) = bias {
                scores = tape.add(scores, b);
            }
            let attn = tape.softmax_rows(scores);
            outs.push(tape.matmul(attn, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.out.forward(tape, joined)
    }
}

/// Two-layer GELU feed-forward network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, hidden: usize) -> Self {
        FeedForward {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), width, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.fc1.forward(tape, x);
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}
