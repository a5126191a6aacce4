#![allow(dead_code)]

use std::path::{Path, PathBuf};

use photoenhance::models::Discriminator;
use photoenhance::models::DiscriminatorConfig;
use photoenhance::tensor::{Scalar, Tensor};
use photoenhance::toy::{write_slim_feature_weights, write_toy_domains};
use photoenhance::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Toy source and target folders plus a slim feature archive.
pub struct Toy {
    pub dir: TempDir,
    pub source: PathBuf,
    pub target: PathBuf,
    pub weights: PathBuf,
}

impl Toy {
    pub fn new(count: usize, size: usize, seed: u64) -> Toy {
        let dir = tempfile::tempdir().unwrap();
        let (source, target) = write_toy_domains(dir.path(), count, size, seed).unwrap();
        let weights = dir.path().join("vgg.safetensors");
        write_slim_feature_weights(&weights, 3).unwrap();
        Toy {
            dir,
            source,
            target,
            weights,
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// A configuration small enough for a step in well under a second.
    pub fn tiny_config(&self, run: &str) -> TrainConfig {
        TrainConfig {
            source_dir: self.source.clone(),
            target_dir: self.target.clone(),
            run_dir: self.path().join(run),
            feature_weights: self.weights.clone(),
            perceptual_layer: "relu2_2".into(),
            iterations: 4,
            batch_size: 2,
            patch_size: 24,
            checkpoint_every: 2,
            deterministic: true,
            generator_width: 8,
            residual_blocks: 2,
            disc_channels: vec![8, 8, 8, 8, 8],
            disc_hidden: 32,
            ..TrainConfig::default()
        }
    }
}

pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(rng.random::<f64>()))
}

pub fn tiny_critic<T: Scalar>(channels: usize, size: usize, seed: u64) -> Discriminator<T> {
    let cfg = DiscriminatorConfig {
        in_channels: channels,
        input_size: size,
        channels: vec![4, 6],
        kernels: vec![3, 3],
        strides: vec![2, 1],
        hidden: 8,
        leaky_slope: 0.2,
    };
    Discriminator::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Central-difference gradient of `f` with respect to every element of `x`.
pub fn numeric_gradient(x: &Tensor<f64>, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / |b|` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}
