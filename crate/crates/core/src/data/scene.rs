use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{AimsError, Result};
use crate::mask::Mask;

/// 8-bit RGB image; pixel values map to `[0, 1]` as `v / 255`.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.height, self.width)
    }
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(AimsError::Shape(format!(
                "RGB image {height}x{width} needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `(H·W) × 3` matrix of values in `[0, 1]`.
    pub fn to_matrix(&self) -> Matrix {
        Array2::from_shape_fn((self.height * self.width, 3), |(p, c)| self.data[p * 3 + c] as f64 / 255.0)
    }
}

impl Serialize for Image {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Raw<'a> {
            height: usize,
            width: usize,
            rgb: &'a str,
        }
        let rgb = base64::engine::general_purpose::STANDARD.encode(&self.data);
        Raw { height: self.height, width: self.width, rgb: &rgb }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Image {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            height: usize,
            width: usize,
            rgb: String,
        }
        let raw = Raw::deserialize(d)?;
        let data = base64::engine::general_purpose::STANDARD
            .decode(raw.rgb.as_bytes())
            .map_err(serde::de::Error::custom)?;
        Image::new(raw.height, raw.width, data).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    /// Index into [`HierScene::entities`].
    pub owner: usize,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    /// Indices into [`HierScene::entities`].
    pub pair: (usize, usize),
    pub mask: Mask,
}

/// A synthetic image with its three-level annotations.
///
/// Annotation lists only hold labelled items; unlabelled objects are still rendered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierScene {
    pub image: Image,
    pub entities: Vec<Mask>,
    pub parts: Vec<Part>,
    pub relations: Vec<Relation>,
    pub annotated_region: Mask,
}

impl HierScene {
    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// `G_ep`: entities × parts, 1 where the entity owns the part.
    pub fn assoc_ep(&self) -> Array2<u8> {
        let mut g = Array2::zeros((self.entities.len(), self.parts.len()));
        for (p, part) in self.parts.iter().enumerate() {
            g[[part.owner, p]] = 1;
        }
        g
    }

    /// `G_re`: relations × entities, 1 where the entity takes part in the relation.
    pub fn assoc_re(&self) -> Array2<u8> {
        let mut g = Array2::zeros((self.relations.len(), self.entities.len()));
        for (r, rel) in self.relations.iter().enumerate() {
            g[[r, rel.pair.0]] = 1;
            g[[r, rel.pair.1]] = 1;
        }
        g
    }

    pub fn annotated_fraction(&self) -> f64 {
        self.annotated_region.count() as f64 / self.annotated_region.len() as f64
    }

    /// Checks every structural invariant; returns a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (h, w) = (self.height(), self.width());
        let all_masks = self
            .entities
            .iter()
            .chain(self.parts.iter().map(|p| &p.mask))
            .chain(self.relations.iter().map(|r| &r.mask))
            .chain(std::iter::once(&self.annotated_region));
        for m in all_masks {
            if m.height() != h || m.width() != w {
                return Err(format!("mask {m:?} does not match image {h}x{w}"));
            }
        }
        for (i, part) in self.parts.iter().enumerate() {
            let owner = self.entities.get(part.owner).ok_or(format!("part {i} owner out of range"))?;
            if !part.mask.and_not(owner).is_empty() {
                return Err(format!("part {i} leaks outside entity {}", part.owner));
            }
        }
        for (i, rel) in self.relations.iter().enumerate() {
            let (a, b) = rel.pair;
            if a == b || a >= self.entities.len() || b >= self.entities.len() {
                return Err(format!("relation {i} has invalid pair {:?}", rel.pair));
            }
            if rel.mask != self.entities[a].or(&self.entities[b]) {
                return Err(format!("relation {i} is not the union of its pair"));
            }
            if self.entities[a].dilate(2).intersection_count(&self.entities[b]) == 0 {
                return Err(format!("relation {i} joins entities that are not in contact"));
            }
        }
        let g = self.assoc_ep();
        for p in 0..self.parts.len() {
            if g.column(p).iter().map(|&v| v as usize).sum::<usize>() != 1 {
                return Err(format!("part {p} column of G_ep does not sum to 1"));
            }
        }
        let g = self.assoc_re();
        for r in 0..self.relations.len() {
            if g.row(r).iter().map(|&v| v as usize).sum::<usize>() != 2 {
                return Err(format!("relation {r} row of G_re does not sum to 2"));
            }
        }
        let mut union = Mask::empty(h, w);
        for e in &self.entities {
            union.or_assign(e);
        }
        if union != self.annotated_region {
            return Err("annotated region is not the union of annotated entities".into());
        }
        Ok(())
    }
}
