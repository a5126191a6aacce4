//! Synthetic data for desk-scale runs, examples and tests.
//!
//! Target-domain images are saturated, sharp scenes of gradients, discs and
//! stripes. Source-domain images are independent scenes put through a
//! "cheap camera": darkened, desaturated, softened and noisy. Nothing is
//! paired.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::LabeledImage;
use crate::models::vgg::{IMAGENET_MEAN, IMAGENET_STD};
use crate::models::{FeatureExtractor, LayerId, VggStack};
use crate::nn::Module;
use crate::tensor::Scalar;
use crate::training::TrainConfig;

/// Per-block widths of the slim random feature stack used at desk scale.
pub const SLIM_VGG_WIDTHS: [usize; 5] = [8, 16, 24, 32, 32];

/// A clean scene as interleaved RGB floats in `[0, 1]`.
pub fn scene(size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut px = vec![0f32; size * size * 3];
    let c0: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let c1: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let angle: f32 = rng.random::<f32>() * std::f32::consts::TAU;
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f32 * ca + y as f32 * sa) / size as f32 * 0.7 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                px[(y * size + x) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    for _ in 0..rng.random_range(2..5) {
        let cx = rng.random_range(0.0..size as f32);
        let cy = rng.random_range(0.0..size as f32);
        let r = rng.random_range(size as f32 * 0.08..size as f32 * 0.3);
        let col: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let stripes = rng.random_bool(0.5);
        let period = rng.random_range(2.0f32..6.0);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                if dx * dx + dy * dy <= r * r {
                    let k = if stripes && ((x as f32 / period) as usize) % 2 == 0 {
                        0.6
                    } else {
                        1.0
                    };
                    for c in 0..3 {
                        px[(y * size + x) * 3 + c] = col[c] * k;
                    }
                }
            }
        }
    }
    px
}

/// The degradation applied to source-domain scenes.
pub fn degrade(px: &[f32], size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut out = vec![0f32; px.len()];
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let yy = (y as i32 + dy).clamp(0, size as i32 - 1) as usize;
                        let xx = (x as i32 + dx).clamp(0, size as i32 - 1) as usize;
                        s += px[(yy * size + xx) * 3 + c];
                        n += 1.0;
                    }
                }
                out[(y * size + x) * 3 + c] = s / n;
            }
        }
    }
    for p in out.chunks_mut(3) {
        let l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        for v in p.iter_mut() {
            let desat = 0.55 * *v + 0.45 * l;
            let dark = 0.65 * desat.powf(1.3) + 0.05;
            *v = (dark + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0);
        }
    }
    out
}

fn write_rgb(path: &Path, px: &[f32], size: usize) -> Result<()> {
    let bytes: Vec<u8> = px.iter().map(|&v| crate::imaging::quantize(v)).collect();
    image::save_buffer(path, &bytes, size as u32, size as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))
}

/// Writes `count` source and `count` target PNGs of `size x size` under
/// `root/source` and `root/target`.
pub fn write_toy_domains(root: &Path, count: usize, size: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let src = root.join("source");
    let tgt = root.join("target");
    for d in [&src, &tgt] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let clean = scene(size, &mut rng);
        write_rgb(&tgt.join(format!("t{i:04}.png")), &clean, size)?;
        let other = scene(size, &mut rng);
        let bad = degrade(&other, size, &mut rng);
        write_rgb(&src.join(format!("s{i:04}.png")), &bad, size)?;
    }
    Ok((src, tgt))
}

/// Writes `count` degraded scenes under `root/degraded` and their clean
/// originals under the same names in `root/reference`.
pub fn write_paired(root: &Path, count: usize, size: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let bad_dir = root.join("degraded");
    let ref_dir = root.join("reference");
    for d in [&bad_dir, &ref_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let clean = scene(size, &mut rng);
        let name = format!("p{i:04}.png");
        write_rgb(&ref_dir.join(&name), &clean, size)?;
        write_rgb(&bad_dir.join(&name), &degrade(&clean, size, &mut rng), size)?;
    }
    Ok((bad_dir, ref_dir))
}

/// Separable box blur with clamped borders, applied `passes` times.
pub fn box_blur(px: &[f32], size: usize, radius: usize, passes: usize) -> Vec<f32> {
    let mut cur = px.to_vec();
    let r = radius as i64;
    let n = (2 * radius + 1) as f32;
    let clamp = |v: i64| v.clamp(0, size as i64 - 1) as usize;
    for _ in 0..passes {
        for horizontal in [true, false] {
            let mut next = vec![0f32; cur.len()];
            for y in 0..size {
                for x in 0..size {
                    for c in 0..3 {
                        let mut s = 0.0;
                        for d in -r..=r {
                            let (yy, xx) = if horizontal {
                                (y, clamp(x as i64 + d))
                            } else {
                                (clamp(y as i64 + d), x)
                            };
                            s += cur[(yy * size + xx) * 3 + c];
                        }
                        next[(y * size + x) * 3 + c] = s / n;
                    }
                }
            }
            cur = next;
        }
    }
    cur
}

/// Writes `count` sharp scenes under `root/sharp` (label 1) and heavily
/// blurred copies of them under `root/blurred` (label 0).
pub fn write_sharp_blurred(root: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let sharp = root.join("sharp");
    let soft = root.join("blurred");
    for d in [&sharp, &soft] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * count);
    for i in 0..count {
        let px = scene(size, &mut rng);
        let a = sharp.join(format!("{i:04}.png"));
        let b = soft.join(format!("{i:04}.png"));
        write_rgb(&a, &px, size)?;
        write_rgb(&b, &box_blur(&px, size, 3, 2), size)?;
        out.push(LabeledImage { path: a, label: 1 });
        out.push(LabeledImage { path: b, label: 0 });
    }
    Ok(out)
}

/// Random feature stack deep enough for every layer, saved as an archive.
pub fn write_slim_feature_weights(path: &Path, seed: u64) -> Result<()> {
    VggStack::<f32>::random(SLIM_VGG_WIDTHS, 16, seed).save(path, None)
}

/// Slim stack whose filters have zero mean over each 3x3 input slice, the
/// way trained first layers mostly hold edge and color-opponent detectors.
/// Flat regions excite nothing but the biases.
pub fn edge_stack(seed: u64) -> VggStack<f32> {
    let mut stack = VggStack::<f32>::random(SLIM_VGG_WIDTHS, 16, seed);
    for (name, p) in stack.params_mut() {
        if name.ends_with("weight") {
            for taps in p.data_mut().chunks_mut(9) {
                let m = taps.iter().sum::<f32>() / 9.0;
                taps.iter_mut().for_each(|v| *v -= m);
            }
        }
    }
    stack
}

pub fn write_edge_feature_weights(path: &Path, seed: u64) -> Result<()> {
    edge_stack(seed).save(path, None)
}

pub fn slim_extractor<T: Scalar>(layer: LayerId, seed: u64) -> FeatureExtractor<T> {
    FeatureExtractor::new(
        VggStack::random(SLIM_VGG_WIDTHS, 16, seed),
        layer,
        IMAGENET_MEAN,
        IMAGENET_STD,
    )
    .expect("slim stack covers every layer")
}

/// A configuration that runs 200 steps in a few minutes on one core: 64 px
/// patches, batch 8, a 16-wide generator and the standard critics.
///
/// The content loss reads `relu3_4`. On a slim random stack the default
/// `relu5_4` sits behind four pools, leaves a 4x4 map at this patch size and
/// contributes almost nothing next to the adversarial terms.
pub fn desk_config(source: &Path, target: &Path, feature_weights: &Path, run_dir: &Path) -> TrainConfig {
    TrainConfig {
        source_dir: source.to_path_buf(),
        target_dir: target.to_path_buf(),
        run_dir: run_dir.to_path_buf(),
        feature_weights: feature_weights.to_path_buf(),
        iterations: 200,
        batch_size: 8,
        patch_size: 64,
        checkpoint_every: 100,
        perceptual_layer: "relu3_4".into(),
        generator_width: 16,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::load_image;

    #[test]
    fn domains_are_written_and_differ_in_brightness() {
        let tmp = tempfile::tempdir().unwrap();
        let (src, tgt) = write_toy_domains(tmp.path(), 4, 24, 1).unwrap();
        let mean = |dir: &Path| -> f64 {
            let mut s = 0.0;
            for e in fs::read_dir(dir).unwrap() {
                s += load_image(e.unwrap().path()).unwrap().sum_f64();
            }
            s
        };
        assert_eq!(fs::read_dir(&src).unwrap().count(), 4);
        assert!(mean(&src) < mean(&tgt));
    }
}
