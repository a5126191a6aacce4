use super::generator::Generator;
use crate::error::{Error, Result};
use crate::imaging::ImageBatch;
use crate::tensor::Tensor;

pub const DEFAULT_TILE_OVERLAP: usize = 32;

/// Runs the generator over a full image, optionally in square tiles.
///
/// Each tile is cut with a margin equal to the generator's receptive radius,
/// so the retained core of every tile sees exactly the context the untiled
/// pass would. Neighbouring cores overlap by `overlap` pixels and are
/// blended with linear ramps.
pub fn enhance(g: &Generator<f32>, img: &ImageBatch, tile: Option<usize>) -> Result<ImageBatch> {
    enhance_with_overlap(g, img, tile, DEFAULT_TILE_OVERLAP)
}

/// Smallest tile side accepted for this generator and overlap.
pub fn min_tile_size(g: &Generator<f32>, overlap: usize) -> usize {
    2 * g.config().receptive_radius() + overlap + 1
}

pub fn enhance_with_overlap(
    g: &Generator<f32>,
    img: &ImageBatch,
    tile: Option<usize>,
    overlap: usize,
) -> Result<ImageBatch> {
    if img.channels() != 3 {
        return Err(Error::arg(format!(
            "enhancement needs 3-channel input, got {}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let Some(tile) = tile else {
        return ImageBatch::clamped(g.forward(img.tensor())?);
    };
    let min = min_tile_size(g, overlap);
    if tile < min {
        return Err(Error::arg(format!(
            "tile size {tile} is below the minimum {min} for this generator"
        )));
    }
    if tile >= h && tile >= w {
        return ImageBatch::clamped(g.forward(img.tensor())?);
    }
    let ctx = g.config().receptive_radius();
    let core = tile - 2 * ctx;
    let rows = starts(h, core, overlap);
    let cols = starts(w, core, overlap);
    let n = img.batch();
    let plane = h * w;
    let mut acc = vec![0f64; n * 3 * plane];
    let mut wsum = vec![0f64; plane];
    for &y0 in &rows {
        let ch = core.min(h);
        let wy = ramp(y0, ch, h, overlap);
        for &x0 in &cols {
            let cw = core.min(w);
            let wx = ramp(x0, cw, w, overlap);
            let top = y0.saturating_sub(ctx);
            let left = x0.saturating_sub(ctx);
            let bottom = (y0 + ch + ctx).min(h);
            let right = (x0 + cw + ctx).min(w);
            let window = img.crop(top, left, bottom - top, right - left)?;
            let out = g.forward(window.tensor())?;
            let (ow, oh) = (right - left, bottom - top);
            for b in 0..n {
                for c in 0..3 {
                    let src = &out.data()[(b * 3 + c) * oh * ow..(b * 3 + c + 1) * oh * ow];
                    let dst = &mut acc[(b * 3 + c) * plane..(b * 3 + c + 1) * plane];
                    for i in 0..ch {
                        let sy = y0 + i - top;
                        for j in 0..cw {
                            let sx = x0 + j - left;
                            dst[(y0 + i) * w + x0 + j] += wy[i] * wx[j] * src[sy * ow + sx] as f64;
                        }
                    }
                }
            }
            for i in 0..ch {
                for j in 0..cw {
                    wsum[(y0 + i) * w + x0 + j] += wy[i] * wx[j];
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(k, v)| (v / wsum[k % plane]) as f32)
        .collect();
    ImageBatch::clamped(Tensor::from_vec(&[n, 3, h, w], data)?)
}

/// Core tile origins along one axis; the last tile is flush with the edge.
fn starts(len: usize, core: usize, overlap: usize) -> Vec<usize> {
    if len <= core {
        return vec![0];
    }
    let step = core - overlap;
    let mut out: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + core < len).collect();
    out.push(len - core);
    out
}

/// Blend weights across one core span: ramps up over the overlap on edges
/// shared with a neighbour, flat at image borders.
fn ramp(start: usize, span: usize, len: usize, overlap: usize) -> Vec<f64> {
    let lead = start > 0;
    let trail = start + span < len;
    (0..span)
        .map(|t| {
            let mut v = 1.0f64;
            if lead {
                v = v.min((t + 1) as f64 / (overlap + 1) as f64);
            }
            if trail {
                v = v.min((span - t) as f64 / (overlap + 1) as f64);
            }
            v
        })
        .collect()
}
