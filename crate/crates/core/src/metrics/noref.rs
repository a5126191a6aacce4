use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::imaging::{interleaved_codes, quantize, ImageBatch};

/// PNG settings behind [`bpp`]. Numbers are only comparable under these.
pub const BPP_COMPRESSION: CompressionType = CompressionType::Best;
pub const BPP_FILTER: FilterType = FilterType::Adaptive;

/// Shannon entropy in bits of the 8-bit codes, all channels and images
/// pooled into one 256-bin histogram.
pub fn entropy(img: &ImageBatch) -> f64 {
    let mut hist = [0u64; 256];
    for &v in img.tensor().data() {
        hist[quantize(v) as usize] += 1;
    }
    let n = img.tensor().len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Size of the PNG encoding in bytes.
pub fn png_size(img: &ImageBatch, i: usize) -> Result<usize> {
    let (_, c, h, w) = img.dims4();
    let color = if c == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, BPP_COMPRESSION, BPP_FILTER)
        .write_image(&interleaved_codes(img, i), w as u32, h as u32, color)
        .map_err(|e| Error::io("<png encoder>", std::io::Error::other(e.to_string())))?;
    Ok(buf.len())
}

/// Bits per pixel of the lossless PNG encoding, averaged over the batch.
pub fn bpp(img: &ImageBatch) -> Result<f64> {
    let (n, _, h, w) = img.dims4();
    let mut total = 0.0;
    for i in 0..n {
        total += (png_size(img, i)? * 8) as f64 / (h * w) as f64;
    }
    Ok(total / n as f64)
}
