//! Letterboxing arbitrary images into the model's input size and mapping masks back.

use serde::{Deserialize, Serialize};

use crate::data::scene::Image;
use crate::mask::Mask;
use crate::resize::linear_taps;

/// Bilinear resize keeping aspect ratio so the long side fills the target, then zero padding
/// at the bottom / right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    pub src_h: usize,
    pub src_w: usize,
    /// Size of the resized content inside the padded frame.
    pub content_h: usize,
    pub content_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Letterbox {
    pub fn new(src_h: usize, src_w: usize, out_h: usize, out_w: usize) -> Self {
        let scale = (out_h as f64 / src_h as f64).min(out_w as f64 / src_w as f64);
        let content_h = ((src_h as f64 * scale).round() as usize).clamp(1, out_h);
        let content_w = ((src_w as f64 * scale).round() as usize).clamp(1, out_w);
        Letterbox { src_h, src_w, content_h, content_w, out_h, out_w }
    }

    pub fn is_identity(&self) -> bool {
        self.src_h == self.out_h && self.src_w == self.out_w
    }

    pub fn apply(&self, image: &Image) -> Image {
        if self.is_identity() {
            return image.clone();
        }
        let ty = linear_taps(self.src_h, self.content_h);
        let tx = linear_taps(self.src_w, self.content_w);
        let mut out = Image::filled(self.out_h, self.out_w, [0, 0, 0]);
        for (y, ry) in ty.iter().enumerate() {
            for (x, rx) in tx.iter().enumerate() {
                let mut acc = [0.0f64; 3];
                for &(sy, wy) in ry {
                    for &(sx, wx) in rx {
                        let p = image.pixel(sy, sx);
                        for c in 0..3 {
                            acc[c] += wy * wx * p[c] as f64;
                        }
                    }
                }
                out.set_pixel(y, x, acc.map(|v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
        out
    }

    /// Source-resolution mask into the model frame (nearest neighbour; padding stays off).
    pub fn mask_to_model(&self, mask: &Mask) -> Mask {
        Mask::from_fn(self.out_h, self.out_w, |y, x| {
            if y >= self.content_h || x >= self.content_w {
                return false;
            }
            let sy = ((y as f64 + 0.5) * self.src_h as f64 / self.content_h as f64) as usize;
            let sx = ((x as f64 + 0.5) * self.src_w as f64 / self.content_w as f64) as usize;
            mask.get(sy.min(self.src_h - 1), sx.min(self.src_w - 1))
        })
    }

    /// Model-frame mask back to source resolution (nearest neighbour).
    pub fn mask_from_model(&self, mask: &Mask) -> Mask {
        Mask::from_fn(self.src_h, self.src_w, |y, x| {
            let my = ((y as f64 + 0.5) * self.content_h as f64 / self.src_h as f64) as usize;
            let mx = ((x as f64 + 0.5) * self.content_w as f64 / self.src_w as f64) as usize;
            mask.get(my.min(self.content_h - 1), mx.min(self.content_w - 1))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_for_matching_size() {
        let lb = Letterbox::new(64, 64, 64, 64);
        assert!(lb.is_identity());
        let m = Mask::from_fn(64, 64, |y, x| (y + x) % 3 == 0);
        assert_eq!(lb.mask_from_model(&lb.mask_to_model(&m)), m);
    }

    #[test]
    fn wide_image_pads_bottom() {
        let lb = Letterbox::new(50, 100, 64, 64);
        assert_eq!((lb.content_h, lb.content_w), (32, 64));
        let img = Image::filled(50, 100, [200, 10, 10]);
        let out = lb.apply(&img);
        assert_eq!(out.pixel(10, 10), [200, 10, 10]);
        assert_eq!(out.pixel(40, 10), [0, 0, 0]);
        let full = Mask::full(50, 100);
        let m = lb.mask_to_model(&full);
        assert_eq!(m.count(), 32 * 64);
        assert_eq!(lb.mask_from_model(&m), full);
    }
}
