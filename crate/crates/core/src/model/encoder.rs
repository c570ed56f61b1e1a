//! Strided convolutional backbone with a top-down pixel decoder.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{AimsError, Result};
use crate::nn::{xavier, LayerNorm, Linear};
use crate::resize::ResampleCache;

/// Scales in pyramid order.
pub const SCALES: [usize; 4] = [2, 3, 4, 5];
const POS_FREQS: [f64; 3] = [1.0, 2.0, 4.0];
const POS_FEATURES: usize = 4 * POS_FREQS.len();

/// Feature maps `F_s` stored as `(h_s · w_s) × C` with pixels in row-major order.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid {
    /// Indexed by `s - 2`.
    pub maps: [Var; 4],
    pub dims: [(usize, usize); 4],
}

impl Pyramid {
    pub fn get(&self, s: usize) -> Var {
        self.maps[s - 2]
    }

    pub fn dims(&self, s: usize) -> (usize, usize) {
        self.dims[s - 2]
    }
}

pub fn pyramid_dims(height: usize, width: usize) -> [(usize, usize); 4] {
    SCALES.map(|s| (height >> s, width >> s))
}

/// Rejects images whose sides are not multiples of 32.
pub fn check_image_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || height % 32 != 0 {
        return Err(AimsError::Shape(format!("image height {height} is not a positive multiple of 32")));
    }
    if width == 0 || width % 32 != 0 {
        return Err(AimsError::Shape(format!("image width {width} is not a positive multiple of 32")));
    }
    Ok(())
}

/// Fourier features of normalized pixel-center coordinates, `(h · w) × 12`.
pub fn position_features(h: usize, w: usize) -> Matrix {
    Matrix::from_shape_fn((h * w, POS_FEATURES), |(p, j)| {
        let (y, x) = (p / w, p % w);
        let coord = if j < POS_FEATURES / 2 { (y as f64 + 0.5) / h as f64 } else { (x as f64 + 0.5) / w as f64 };
        let f = POS_FREQS[(j % (POS_FEATURES / 2)) / 2];
        let a = PI * f * coord;
        if j % 2 == 0 { a.sin() } else { a.cos() }
    })
}

/// `k × k` stride-`k` convolution as gather + linear.
#[derive(Clone, Debug)]
pub struct PatchConv {
    pub linear: Linear,
    pub k: usize,
}

impl PatchConv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, k: usize, c_in: usize, c_out: usize) -> Self {
        PatchConv { linear: Linear::new(store, rng, name, k * k * c_in, c_out), k }
    }

    /// Returns the output and its spatial size.
    pub fn forward(&self, tape: &mut Tape, cache: &mut ResampleCache, x: Var, h: usize, w: usize) -> (Var, usize, usize) {
        let g = cache.conv(h, w, self.k, self.k, 0);
        let cols = tape.gather(x, g);
        (self.linear.forward(tape, cols), h / self.k, w / self.k)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem: PatchConv,
    pos: ParamId,
    stem_norm: LayerNorm,
    downs: Vec<(PatchConv, LayerNorm)>,
    /// Laterals for s = 2..5.
    laterals: Vec<Linear>,
    outputs: Vec<Linear>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, c: usize) -> Self {
        let stem = PatchConv::new(store, rng, "encoder.stem", 4, 3, c);
        let pos = store.add("encoder.pos.weight", xavier(rng, POS_FEATURES, c));
        let stem_norm = LayerNorm::new(store, "encoder.stem_norm", c);
        let downs = (3..=5)
            .map(|s| {
                (
                    PatchConv::new(store, rng, &format!("encoder.down{s}"), 2, c, c),
                    LayerNorm::new(store, &format!("encoder.down{s}_norm"), c),
                )
            })
            .collect();
        let laterals = SCALES.iter().map(|s| Linear::new(store, rng, &format!("encoder.lateral{s}"), c, c)).collect();
        let outputs = SCALES.iter().map(|s| Linear::new(store, rng, &format!("encoder.output{s}"), c, c)).collect();
        Encoder { stem, pos, stem_norm, downs, laterals, outputs }
    }

    /// Parameters that act as additive offsets; zeroing them makes the encoder map 0 to 0.
    pub fn is_offset_param(name: &str) -> bool {
        name.starts_with("encoder.") && (name.ends_with(".bias") || name.ends_with(".beta") || name == "encoder.pos.weight")
    }

    /// `image`: `(h · w) × 3` with values in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape, cache: &mut ResampleCache, image: Var, h: usize, w: usize) -> Result<Pyramid> {
        check_image_dims(h, w)?;
        if tape.shape(image) != (h * w, 3) {
            return Err(AimsError::Shape(format!("image matrix {:?} is not {}x3", tape.shape(image), h * w)));
        }
        let (x, h2, w2) = self.stem.forward(tape, cache, image, h, w);
        let pos_feat = tape.constant(position_features(h2, w2));
        let pos_w = tape.param(self.pos);
        let pos = tape.matmul(pos_feat, pos_w);
        let x = tape.add(x, pos);
        let x = self.stem_norm.forward(tape, x);
        let mut stages = vec![(tape.gelu(x), h2, w2)];
        for (conv, norm) in &self.downs {
            let &(prev, ph, pw) = stages.last().unwrap();
            let (y, yh, yw) = conv.forward(tape, cache, prev, ph, pw);
            let y = norm.forward(tape, y);
            stages.push((tape.gelu(y), yh, yw));
        }
        let mut tops: Vec<Var> = Vec::with_capacity(4);
        let mut above: Option<(Var, usize, usize)> = None;
        for i in (0..4).rev() {
            let (c_i, hi, wi) = stages[i];
            let mut p = self.laterals[i].forward(tape, c_i);
            if let Some((a, ah, aw)) = above {
                let up = cache.bilinear(ah, aw, hi, wi);
                let a = tape.sparse(a, up);
                p = tape.add(p, a);
            }
            above = Some((p, hi, wi));
            tops.push(p);
        }
        tops.reverse();
        let maps = [0, 1, 2, 3].map(|i| self.outputs[i].forward(tape, tops[i]));
        Ok(Pyramid { maps, dims: pyramid_dims(h, w) })
    }
}
