use crate::error::{Error, Result};
use crate::imaging::{quantize, ImageBatch, LUMA_WEIGHTS};

/// Returned by [`psnr`] when the two images are identical after quantization.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn same_shape(a: &ImageBatch, b: &ImageBatch) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::arg(format!(
            "images differ in shape: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over 8-bit codes, pooled over the whole
/// batch. Identical inputs give [`PSNR_IDENTICAL`].
pub fn psnr(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.tensor().len();
    if n == 0 {
        return Err(Error::arg("psnr of an empty image"));
    }
    let se: f64 = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(&x, &y)| {
            let d = f64::from(quantize(x)) - f64::from(quantize(y));
            d * d
        })
        .sum();
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Luma of image `i` on the 0..255 scale, computed from its 8-bit codes.
fn luma_codes(img: &ImageBatch, i: usize) -> Vec<f64> {
    let (_, c, h, w) = img.dims4();
    let plane = h * w;
    let data = &img.tensor().data()[i * c * plane..(i + 1) * c * plane];
    let code = |v: f32| f64::from(quantize(v));
    if c == 1 {
        return data.iter().map(|&v| code(v)).collect();
    }
    (0..plane)
        .map(|p| {
            LUMA_WEIGHTS[0] * code(data[p])
                + LUMA_WEIGHTS[1] * code(data[plane + p])
                + LUMA_WEIGHTS[2] * code(data[2 * plane + p])
        })
        .collect()
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let mut g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = g.iter().enumerate().map(|(j, gj)| gj * x[y * w + x0 + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = g.iter().enumerate().map(|(j, gj)| gj * rows[(y0 + j) * ow + x0]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let e_aa = filter_valid(&prod(a, a), h, w, &g);
    let e_bb = filter_valid(&prod(b, b), h, w, &g);
    let e_ab = filter_valid(&prod(a, b), h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean local SSIM on the luma of each image, averaged over the batch.
///
/// 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range
/// 255, evaluated only where the window fits inside the image.
pub fn ssim(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    same_shape(a, b)?;
    let (n, c, h, w) = a.dims4();
    if c != 1 && c != 3 {
        return Err(Error::arg(format!("ssim expects 1 or 3 channels, got {c}")));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += ssim_plane(&luma_codes(a, i), &luma_codes(b, i), h, w);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn from_codes(c: usize, h: usize, w: usize, codes: impl Fn(usize) -> u8) -> ImageBatch {
        ImageBatch::new(Tensor::from_fn(&[1, c, h, w], |i| f32::from(codes(i)) / 255.0)).unwrap()
    }

    fn random(c: usize, h: usize, w: usize, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<u8> = (0..c * h * w).map(|_| rng.random()).collect();
        from_codes(c, h, w, |i| codes[i])
    }

    #[test]
    fn psnr_of_mse_100_pair() {
        let a = from_codes(3, 8, 8, |_| 100);
        let b = from_codes(3, 8, 8, |i| if i % 2 == 0 { 90 } else { 110 });
        let v = psnr(&a, &b).unwrap();
        assert!((v - 10.0 * (65025.0f64 / 100.0).log10()).abs() < 1e-9);
        assert!((v - 28.13).abs() < 0.01);
    }

    #[test]
    fn psnr_extremes() {
        let a = from_codes(3, 4, 4, |_| 0);
        let b = from_codes(3, 4, 4, |_| 255);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
    }

    #[test]
    fn shape_mismatch_is_an_argument_error() {
        let a = from_codes(3, 12, 12, |_| 0);
        let b = from_codes(3, 12, 13, |_| 0);
        assert!(matches!(psnr(&a, &b), Err(Error::Argument(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::Argument(_))));
    }

    #[test]
    fn ssim_self_is_one_and_inverse_is_negative() {
        let x = random(3, 32, 40, 1);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        let g = random(1, 32, 32, 2);
        let inv = from_codes(1, 32, 32, |i| 255 - quantize(g.tensor().data()[i]));
        assert!(ssim(&g, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let x = random(1, 10, 30, 3);
        assert!(matches!(ssim(&x, &x), Err(Error::Argument(_))));
    }

    /// Direct evaluation of every window with the 2-D Gaussian weights.
    fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let k = SSIM_WINDOW;
        let mid = (k - 1) as f64 / 2.0;
        let mut wts = vec![0.0; k * k];
        for y in 0..k {
            for x in 0..k {
                let d2 = (y as f64 - mid).powi(2) + (x as f64 - mid).powi(2);
                wts[y * k + x] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let s: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|v| *v /= s);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let p = (y0 + y) * w + x0 + x;
                        ma += wts[y * k + x] * a[p];
                        mb += wts[y * k + x] * b[p];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let p = (y0 + y) * w + x0 + x;
                        let wt = wts[y * k + x];
                        va += wt * (a[p] - ma).powi(2);
                        vb += wt * (b[p] - mb).powi(2);
                        cov += wt * (a[p] - ma) * (b[p] - mb);
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let a = random(3, 64, 64, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = Tensor::from_fn(a.tensor().shape(), |i| {
            a.tensor().data()[i] + rng.random_range(-0.2f32..0.2)
        });
        let b = ImageBatch::clamped(noisy).unwrap();
        let expected = ssim_direct(&luma_codes(&a, 0), &luma_codes(&b, 0), 64, 64);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert!((ssim(&b, &a).unwrap() - got).abs() < 1e-12);
    }
}
