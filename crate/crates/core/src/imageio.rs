//! PNG encoding and decoding for images and masks.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::data::scene::Image;
use crate::error::{AimsError, Result};
use crate::mask::Mask;

/// Decodes any supported format into RGB (alpha is dropped).
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory(bytes).map_err(|e| AimsError::Image(e.to_string()))?.into_rgb8();
    let (w, h) = img.dimensions();
    Image::new(h as usize, w as usize, img.into_raw())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| AimsError::io(path, e))?;
    decode_image(&bytes).map_err(|e| AimsError::Image(format!("{}: {e}", path.display())))
}

fn encode(img: DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("PNG encoding into memory");
    out.into_inner()
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.bytes().to_vec())
        .expect("buffer matches dimensions");
    encode(DynamicImage::ImageRgb8(buf))
}

/// 8-bit grayscale PNG, 255 inside the mask.
pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let data = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("buffer matches dimensions");
    encode(DynamicImage::ImageLuma8(buf))
}

/// Any image format; pixels with luma ≥ 128 are inside.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory(bytes).map_err(|e| AimsError::Image(e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_bits(h as usize, w as usize, img.pixels().map(|p| p.0[0] >= 128).collect())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| AimsError::io(path, e))?;
    decode_mask(&bytes).map_err(|e| AimsError::Image(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| AimsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let mut img = Image::filled(5, 7, [1, 2, 3]);
        img.set_pixel(4, 6, [250, 0, 9]);
        assert_eq!(decode_image(&encode_png(&img)).unwrap(), img);
        let m = Mask::from_fn(5, 7, |y, x| y == x);
        assert_eq!(decode_mask(&encode_mask_png(&m)).unwrap(), m);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(matches!(decode_image(b"not an image"), Err(AimsError::Image(_))));
    }
}
