use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageError, ImageReader};

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads an 8- or 16-bit grayscale or RGB raster (alpha is dropped) into a
/// batch of one, scaled by the format's maximum code value.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBatch> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::Format {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let format_err = |what: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("unsupported pixel layout {what}"),
    };
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, planar(b.as_raw(), 1, 1, w, h, 255.0)),
        DynamicImage::ImageLumaA8(b) => (1, planar(b.as_raw(), 2, 1, w, h, 255.0)),
        DynamicImage::ImageRgb8(b) => (3, planar(b.as_raw(), 3, 3, w, h, 255.0)),
        DynamicImage::ImageRgba8(b) => (3, planar(b.as_raw(), 4, 3, w, h, 255.0)),
        DynamicImage::ImageLuma16(b) => (1, planar(b.as_raw(), 1, 1, w, h, 65535.0)),
        DynamicImage::ImageLumaA16(b) => (1, planar(b.as_raw(), 2, 1, w, h, 65535.0)),
        DynamicImage::ImageRgb16(b) => (3, planar(b.as_raw(), 3, 3, w, h, 65535.0)),
        DynamicImage::ImageRgba16(b) => (3, planar(b.as_raw(), 4, 3, w, h, 65535.0)),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => return Err(format_err("32-bit float")),
        _ => return Err(format_err("(unknown)")),
    };
    ImageBatch::new(Tensor::from_vec(&[1, channels, h, w], data)?)
}

fn planar<P: Copy + Into<f64>>(raw: &[P], stride: usize, keep: usize, w: usize, h: usize, max: f64) -> Vec<f32> {
    let mut out = vec![0f32; keep * w * h];
    for (px, chunk) in raw.chunks_exact(stride).enumerate() {
        for c in 0..keep {
            out[c * w * h + px] = (chunk[c].into() / max) as f32;
        }
    }
    out
}

/// 8-bit code of a `[0, 1]` value, rounding halves up (`0.5 -> 128`).
pub fn quantize(v: f32) -> u8 {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0 + 0.5).floor() as u8
}

/// Image `i` of the batch as interleaved 8-bit codes (HWC order).
pub fn interleaved_codes(img: &ImageBatch, i: usize) -> Vec<u8> {
    let (_, c, h, w) = img.dims4();
    let data = img.data();
    let base = i * c * h * w;
    let mut out = vec![0u8; c * h * w];
    for ch in 0..c {
        for px in 0..h * w {
            out[px * c + ch] = quantize(data[base + ch * h * w + px]);
        }
    }
    out
}

/// Image `i` of the batch as an 8-bit [`DynamicImage`].
pub fn to_dynamic_image(img: &ImageBatch, i: usize) -> DynamicImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let codes = interleaved_codes(img, i);
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, codes).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, codes).expect("sized buffer"))
    }
}

/// Writes a batch of one as an 8-bit raster; the format follows the extension.
pub fn save_image(img: &ImageBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.batch() != 1 {
        return Err(Error::arg(format!(
            "save_image expects a batch of 1, got {}",
            img.batch()
        )));
    }
    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    image::save_buffer(
        path,
        &interleaved_codes(img, 0),
        img.width() as u32,
        img.height() as u32,
        color,
    )
    .map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(128.0 / 255.0), 128);
    }

    #[test]
    fn loads_8bit_white_and_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([255])).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.shape(), &[1, 1, 2, 2]);
        assert!(img.data().iter().all(|&v| v == 1.0));

        let p = dir.path().join("mid.png");
        image::RgbImage::from_pixel(3, 1, image::Rgb([128, 0, 255]))
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.shape(), &[1, 3, 1, 3]);
        assert!((img.data()[0] - 0.50196).abs() < 1e-5);
        assert_eq!(img.data()[3], 0.0);
        assert_eq!(img.data()[6], 1.0);
    }

    #[test]
    fn loads_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_pixel(2, 1, image::Luma([65535u16]))
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        image::RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 7) as u8, (y * 5) as u8, 3]))
            .save(&p)
            .unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match load_image(&p) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, p),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn save_load_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.png");
        let t = Tensor::from_fn(&[1, 3, 5, 7], |i| ((i * 37) % 101) as f32 / 100.0);
        let img = ImageBatch::new(t).unwrap();
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);

        let half = ImageBatch::filled(1, 1, 1, 1, 0.5).unwrap();
        save_image(&half, &p).unwrap();
        let raw = image::open(&p).unwrap().to_luma8();
        assert_eq!(raw.get_pixel(0, 0).0[0], 128);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = ImageBatch::filled(1, 3, 2, 2, 0.2).unwrap();
        let err = save_image(&img, "/nonexistent-dir/out.png").unwrap_err();
        assert_eq!(err.class(), "io");
    }
}
