use super::colormap::COLORMAP;
use super::stft::SpectrogramMatrix;

pub const RENDER_SIZE: usize = 227;

/// `RENDER_SIZE x RENDER_SIZE` RGB image, row-major, 3 bytes per pixel.
/// Row 0 is the highest retained frequency; columns run forward in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSpectrogram {
    pub pixels: Vec<u8>,
}

impl RenderedSpectrogram {
    pub fn width(&self) -> usize {
        RENDER_SIZE
    }

    pub fn height(&self) -> usize {
        RENDER_SIZE
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * RENDER_SIZE + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Log-scale, min-max normalize, bilinear resize, colormap.
///
/// A constant matrix has no range to normalize: all zeros map to entry 0,
/// any other constant to the middle entry 128.
pub fn render(s: &SpectrogramMatrix) -> RenderedSpectrogram {
    assert!(s.freq_bins > 0 && s.frames > 0, "render needs a non-empty matrix");
    let logv: Vec<f64> = s.magnitudes.iter().map(|&m| (1.0 + m).log10()).collect();
    let (lo, hi) = logv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut pixels = Vec::with_capacity(RENDER_SIZE * RENDER_SIZE * 3);
    if hi == lo {
        let entry = if hi == 0.0 { 0 } else { 128 };
        for _ in 0..RENDER_SIZE * RENDER_SIZE {
            pixels.extend_from_slice(&COLORMAP[entry]);
        }
        return RenderedSpectrogram { pixels };
    }
    let norm: Vec<f64> = logv.iter().map(|&v| (v - lo) / (hi - lo)).collect();
    let (rows, cols) = (s.freq_bins, s.frames);
    for y in 0..RENDER_SIZE {
        // flip so that high frequencies sit at the top
        let (r0, r1, fy) = sample_coord(y, RENDER_SIZE, rows);
        let (r0, r1) = (rows - 1 - r0, rows - 1 - r1);
        for x in 0..RENDER_SIZE {
            let (c0, c1, fx) = sample_coord(x, RENDER_SIZE, cols);
            let top = norm[r0 * cols + c0] * (1.0 - fx) + norm[r0 * cols + c1] * fx;
            let bottom = norm[r1 * cols + c0] * (1.0 - fx) + norm[r1 * cols + c1] * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            let entry = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
            pixels.extend_from_slice(&COLORMAP[entry]);
        }
    }
    RenderedSpectrogram { pixels }
}

/// Half-pixel-centre mapping of output index `i` onto a source axis of
/// length `src`: neighbouring source indices and the blend weight.
fn sample_coord(i: usize, dst: usize, src: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}


impl From<&RenderedSpectrogram> for crate::viz::RgbImage {
    fn from(r: &RenderedSpectrogram) -> Self {
        Self {
            width: RENDER_SIZE,
            height: RENDER_SIZE,
            pixels: r.pixels.clone(),
        }
    }
}
