//! Half-pixel bilinear resampling and convolution gathers on row-major pixel grids.

use std::rc::Rc;

use crate::autograd::{Matrix, RowGather, SparseRows};

/// 1-D bilinear taps mapping `src` samples to `dst` samples with half-pixel centers
/// (`align_corners = false`), clamped at the borders.
pub fn linear_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            let mut taps = vec![(i0, 1.0 - frac)];
            if frac > 0.0 {
                taps.push((i1, frac));
            }
            taps
        })
        .collect()
}

/// Sparse row map resizing a `(h × w)` pixel grid to `(out_h × out_w)`.
pub fn bilinear_map(h: usize, w: usize, out_h: usize, out_w: usize) -> SparseRows {
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut entries = Vec::new();
    for (oy, ys) in ty.iter().enumerate() {
        for (ox, xs) in tx.iter().enumerate() {
            for &(iy, wy) in ys {
                for &(ix, wx) in xs {
                    entries.push((oy * out_w + ox, iy * w + ix, wy * wx));
                }
            }
        }
    }
    SparseRows { rows: out_h * out_w, cols: h * w, entries }
}

/// Resize every column of a `(h·w × C)` matrix.
pub fn resize_rows(x: &Matrix, h: usize, w: usize, out_h: usize, out_w: usize) -> Matrix {
    bilinear_map(h, w, out_h, out_w).apply(x)
}

/// Gather for a `k × k` convolution with stride `stride` and zero padding `pad` over a
/// `(h × w)` grid. Blocks are ordered `(ky, kx)` row-major.
pub fn conv_gather(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (RowGather, usize, usize) {
    let out_h = (h + 2 * pad - k) / stride + 1;
    let out_w = (w + 2 * pad - k) / stride + 1;
    let mut index = Vec::with_capacity(out_h * out_w * k * k);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ky in 0..k {
                for kx in 0..k {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    let x = (ox * stride + kx) as isize - pad as isize;
                    let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                    index.push(inside.then(|| y as usize * w + x as usize));
                }
            }
        }
    }
    (RowGather { out_rows: out_h * out_w, blocks: k * k, index }, out_h, out_w)
}

/// Cache of resampling operators keyed by geometry.
#[derive(Default)]
pub struct ResampleCache {
    bilinear: std::collections::HashMap<(usize, usize, usize, usize), Rc<SparseRows>>,
    gathers: std::collections::HashMap<(usize, usize, usize, usize, usize), Rc<RowGather>>,
}

impl ResampleCache {
    pub fn bilinear(&mut self, h: usize, w: usize, out_h: usize, out_w: usize) -> Rc<SparseRows> {
        self.bilinear
            .entry((h, w, out_h, out_w))
            .or_insert_with(|| Rc::new(bilinear_map(h, w, out_h, out_w)))
            .clone()
    }

    pub fn conv(&mut self, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Rc<RowGather> {
        self.gathers
            .entry((h, w, k, stride, pad))
            .or_insert_with(|| Rc::new(conv_gather(h, w, k, stride, pad).0))
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_pairs() {
        let taps = linear_taps(4, 2);
        assert_eq!(taps[0], vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(taps[1], vec![(2, 0.5), (3, 0.5)]);
    }

    #[test]
    fn quartering_reads_middle_pair() {
        let taps = linear_taps(8, 2);
        assert_eq!(taps[0], vec![(1, 0.5), (2, 0.5)]);
        assert_eq!(taps[1], vec![(5, 0.5), (6, 0.5)]);
    }

    #[test]
    fn upsampling_clamps_at_edges() {
        let taps = linear_taps(2, 4);
        // positions: -0.25 -> 0, 0.25, 0.75, 1.25 -> clamped pair (1,1)
        assert_eq!(taps[0], vec![(0, 1.0)]);
        assert_eq!(taps[1], vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(taps[2], vec![(0, 0.25), (1, 0.75)]);
        assert_eq!(taps[3], vec![(1, 1.0)]);
    }

    #[test]
    fn constants_survive_resizing() {
        let x = Matrix::from_elem((16 * 16, 3), 2.5);
        for (oh, ow) in [(8, 8), (4, 4), (2, 2), (64, 64)] {
            let y = resize_rows(&x, 16, 16, oh, ow);
            assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn conv_gather_shapes() {
        let (g, oh, ow) = conv_gather(8, 8, 2, 2, 0);
        assert_eq!((oh, ow, g.out_rows, g.blocks), (4, 4, 16, 4));
        assert_eq!(&g.index[..4], &[Some(0), Some(1), Some(8), Some(9)]);
        let (g, oh, ow) = conv_gather(4, 4, 3, 1, 1);
        assert_eq!((oh, ow), (4, 4));
        assert_eq!(g.index[0], None);
        assert_eq!(g.index[4], Some(0));
    }
}
