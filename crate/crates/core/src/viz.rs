//! Image export: convolution filter grids and PNG writing.

use std::path::Path;

use crate::autograd::{Scalar, Tensor, TensorError};

/// An 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Lossless PNG encoding; identical input gives identical bytes.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let enc = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            enc,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory PNG encoding");
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_png())
    }
}

/// Grid shape `(cols, rows)` for `n` tiles: the divisor pair of `n` closest
/// to square, with the wider side horizontal. 96 gives 12 x 8.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && n % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (n / rows, rows)
}

/// Tiles every filter of a `[K, C, kh, kw]` weight tensor, row-major, with
/// 1-pixel black separators. Each filter is min-max normalized to
/// `[0, 255]` on its own; a constant filter becomes uniform gray 128.
/// Three-channel filters render in color, others as the channel mean.
pub fn filter_grid<T: Scalar>(weights: &Tensor<T>) -> Result<RgbImage, TensorError> {
    let s = weights.shape();
    if s.len() != 4 || s[0] == 0 {
        return Err(TensorError::Rank {
            op: "filter_grid",
            expected: 4,
            shape: s.to_vec(),
        });
    }
    let (k, c, kh, kw) = (s[0], s[1], s[2], s[3]);
    let (cols, rows) = grid_shape(k);
    let mut img = RgbImage::new(cols * kw + cols - 1, rows * kh + rows - 1);
    let per = c * kh * kw;
    for f in 0..k {
        let v: Vec<f64> = weights.data()[f * per..(f + 1) * per]
            .iter()
            .map(|x| x.to_f64_lossless())
            .collect();
        let rgb_at = |ch: usize, y: usize, x: usize| v[(ch * kh + y) * kw + x];
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let level = |x: f64| -> u8 {
            if hi == lo {
                128
            } else {
                ((x - lo) / (hi - lo) * 255.0).round() as u8
            }
        };
        let (ox, oy) = ((f % cols) * (kw + 1), (f / cols) * (kh + 1));
        for y in 0..kh {
            for x in 0..kw {
                let px = if c == 3 {
                    [level(rgb_at(0, y, x)), level(rgb_at(1, y, x)), level(rgb_at(2, y, x))]
                } else {
                    let m = (0..c).map(|ch| rgb_at(ch, y, x)).sum::<f64>() / c as f64;
                    let g = level(m);
                    [g, g, g]
                };
                img.put(ox + x, oy + y, px);
            }
        }
    }
    Ok(img)
}
