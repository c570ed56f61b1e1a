//! Mask prompt encoder: a binary prompt becomes a feature pyramid added to the image features.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Matrix, ParamStore, Tape, Var};
use crate::error::{AimsError, Result};
use crate::mask::Mask;
use crate::model::encoder::{pyramid_dims, PatchConv, Pyramid};
use crate::nn::{LayerNorm, Linear};
use crate::resize::ResampleCache;

#[derive(Clone, Debug)]
pub struct MaskPromptEncoder {
    conv1: PatchConv,
    norm1: LayerNorm,
    conv2: PatchConv,
    norm2: LayerNorm,
    conv3: Linear,
}

impl MaskPromptEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, c: usize) -> Self {
        MaskPromptEncoder {
            conv1: PatchConv::new(store, rng, "mpe.conv1", 2, 1, c),
            norm1: LayerNorm::new(store, "mpe.norm1", c),
            conv2: PatchConv::new(store, rng, "mpe.conv2", 2, c, c),
            norm2: LayerNorm::new(store, "mpe.norm2", c),
            conv3: Linear::new(store, rng, "mpe.conv3", c, c),
        }
    }

    /// `M_2`: `(H/4 · W/4) × C`.
    pub fn encode(&self, tape: &mut Tape, cache: &mut ResampleCache, prompt: &Mask) -> Result<Var> {
        let (h, w) = (prompt.height(), prompt.width());
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(AimsError::Shape(format!("prompt {h}x{w} is not divisible by 4")));
        }
        let x = tape.constant(Matrix::from_shape_vec((h * w, 1), prompt.to_f64()).expect("mask length"));
        let (x, h1, w1) = self.conv1.forward(tape, cache, x, h, w);
        let x = self.norm1.forward(tape, x);
        let x = tape.gelu(x);
        let (x, h2, w2) = self.conv2.forward(tape, cache, x, h1, w1);
        let x = self.norm2.forward(tape, x);
        let x = tape.gelu(x);
        debug_assert_eq!((h2, w2), (h / 4, w / 4));
        Ok(self.conv3.forward(tape, x))
    }
}

/// `M_3..M_5` by bilinear downscaling of `M_2`; returns all four scales.
pub fn downscale_pyramid(tape: &mut Tape, cache: &mut ResampleCache, m2: Var, height: usize, width: usize) -> Pyramid {
    let dims = pyramid_dims(height, width);
    let (h2, w2) = dims[0];
    let mut maps = [m2; 4];
    for i in 1..4 {
        let (hs, ws) = dims[i];
        let map = cache.bilinear(h2, w2, hs, ws);
        maps[i] = tape.sparse(m2, map);
    }
    Pyramid { maps, dims }
}

/// `F'_s = F_s + M_s` at every scale.
pub fn inject(tape: &mut Tape, features: &Pyramid, prompt: &Pyramid) -> Result<Pyramid> {
    if features.dims != prompt.dims {
        return Err(AimsError::Shape(format!(
            "prompt pyramid {:?} does not match feature pyramid {:?}",
            prompt.dims, features.dims
        )));
    }
    for i in 0..4 {
        if tape.shape(features.maps[i]) != tape.shape(prompt.maps[i]) {
            return Err(AimsError::Shape(format!(
                "scale {}: prompt features {:?} vs image features {:?}",
                i + 2,
                tape.shape(prompt.maps[i]),
                tape.shape(features.maps[i])
            )));
        }
    }
    let maps = [0, 1, 2, 3].map(|i| tape.add(features.maps[i], prompt.maps[i]));
    Ok(Pyramid { maps, dims: features.dims })
}
