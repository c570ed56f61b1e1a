//! Binary masks and their run-length wire encoding.

use serde::{Deserialize, Serialize};

use crate::error::{AimsError, Result};

/// Row-major binary mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} on)", self.height, self.width, self.count())
    }
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask { width, height, bits: vec![false; width * height] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask { width, height, bits: vec![true; width * height] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Mask { width, height, bits }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(AimsError::Shape(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(AimsError::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert!(self.same_shape(other), "mask shape mismatch");
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or_assign(&mut self, other: &Mask) {
        assert!(self.same_shape(other), "mask shape mismatch");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// |a ∧ b| / |a ∨ b|. Two empty masks have IoU 1.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        self.check_shape(other)?;
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Pixels as 0.0 / 1.0 in row-major order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        Mask::from_fn(self.height, self.width, |y, x| {
            let (y, x) = (y as isize, x as isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h && xx >= 0 && xx < w && self.get(yy as usize, xx as usize) {
                        return true;
                    }
                }
            }
            false
        })
    }

    /// Rasterize a polygon given as `(x, y)` vertices; a pixel is inside when its center is
    /// (even-odd rule).
    pub fn from_polygon(height: usize, width: usize, polygon: &[(f64, f64)]) -> Mask {
        Mask::from_fn(height, width, |y, x| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            let n = polygon.len();
            for i in 0..n {
                let (x0, y0) = polygon[i];
                let (x1, y1) = polygon[(i + 1) % n];
                if (y0 > py) != (y1 > py) {
                    let cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0);
                    if px < cross {
                        inside = !inside;
                    }
                }
            }
            inside
        })
    }

    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0usize;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        Rle {
            width: self.width,
            height: self.height,
            counts: counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
        }
    }
}

/// Run-length encoding over row-major pixel order. `counts` alternates runs of zeros and ones,
/// starting with zeros (the first run may be 0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: usize,
    pub height: usize,
    pub counts: String,
}

impl Rle {
    pub fn decode(&self) -> Result<Mask> {
        let total = self.width * self.height;
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        let bytes = self.counts.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b' ' {
                i += 1;
                continue;
            }
            let start = i;
            while i < bytes.len() && bytes[i] != b' ' {
                if !bytes[i].is_ascii_digit() {
                    return Err(AimsError::Rle {
                        offset: i,
                        reason: format!("unexpected byte {:?}", bytes[i] as char),
                    });
                }
                i += 1;
            }
            let run: usize = self.counts[start..i].parse().map_err(|_| AimsError::Rle {
                offset: start,
                reason: "run length out of range".into(),
            })?;
            if bits.len() + run > total {
                return Err(AimsError::Rle {
                    offset: start,
                    reason: format!("runs exceed {total} pixels"),
                });
            }
            bits.extend(std::iter::repeat_n(value, run));
            value = !value;
        }
        if bits.len() != total {
            return Err(AimsError::Rle {
                offset: bytes.len(),
                reason: format!("runs cover {} of {total} pixels", bits.len()),
            });
        }
        Ok(Mask { width: self.width, height: self.height, bits })
    }
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rle().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rle = Rle::deserialize(d)?;
        rle.decode().map_err(serde::de::Error::custom)
    }
}
