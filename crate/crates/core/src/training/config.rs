use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{BlurKernel, SigmaConvention};
use crate::losses::{LossWeights, TvMode};
use crate::models::{ArchConfig, DiscriminatorConfig, GeneratorConfig, LayerId};
use crate::nn::AdamConfig;

/// Every knob of a training run. Serialized as a flat TOML document whose
/// keys are the field names; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
    pub recursive: bool,
    pub run_dir: PathBuf,
    pub feature_weights: PathBuf,
    pub perceptual_layer: String,

    pub iterations: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Sample batches on the training thread instead of a prefetch thread.
    pub deterministic: bool,
    pub prefetch_depth: usize,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub content_weight: f64,
    pub adversarial_weight: f64,
    pub tv_weight: f64,
    pub tv_mode: TvMode,

    pub blur_amplitude: f64,
    pub blur_sigma: f64,
    pub blur_radius: usize,
    pub blur_sigma_convention: SigmaConvention,

    pub generator_width: usize,
    pub residual_blocks: usize,
    pub entry_kernel: usize,
    pub block_kernel: usize,
    pub post_convs: usize,
    pub exit_kernel: usize,

    pub disc_channels: Vec<usize>,
    pub disc_kernels: Vec<usize>,
    pub disc_strides: Vec<usize>,
    pub disc_hidden: usize,
    pub disc_leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::standard(3, 100);
        let adam = AdamConfig::default();
        let w = LossWeights::default();
        TrainConfig {
            source_dir: PathBuf::from("data/source"),
            target_dir: PathBuf::from("data/target"),
            recursive: false,
            run_dir: PathBuf::from("runs/default"),
            feature_weights: PathBuf::from("weights/vgg19.safetensors"),
            perceptual_layer: LayerId::DEFAULT.to_string(),
            iterations: 20_000,
            batch_size: 30,
            patch_size: 100,
            seed: 0,
            checkpoint_every: 1000,
            deterministic: false,
            prefetch_depth: 2,
            learning_rate: 5e-4,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            content_weight: w.content,
            adversarial_weight: w.adversarial,
            tv_weight: w.tv,
            tv_mode: TvMode::Anisotropic,
            blur_amplitude: 0.053,
            blur_sigma: 3.0,
            blur_radius: 10,
            blur_sigma_convention: SigmaConvention::Printed,
            generator_width: g.width,
            residual_blocks: g.residual_blocks,
            entry_kernel: g.entry_kernel,
            block_kernel: g.block_kernel,
            post_convs: g.post_convs,
            exit_kernel: g.exit_kernel,
            disc_channels: d.channels,
            disc_kernels: d.kernels,
            disc_strides: d.strides,
            disc_hidden: d.hidden,
            disc_leaky_slope: d.leaky_slope,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value`, where `value` is TOML (bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        assign(self, assignment)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            content: self.content_weight,
            adversarial: self.adversarial_weight,
            tv: self.tv_weight,
        }
    }

    pub fn blur_kernel(&self) -> Result<BlurKernel> {
        BlurKernel::gaussian(
            self.blur_radius,
            self.blur_amplitude,
            (0.0, 0.0),
            (self.blur_sigma, self.blur_sigma),
            self.blur_sigma_convention,
        )
    }

    pub fn arch(&self) -> ArchConfig {
        let disc = |in_channels| DiscriminatorConfig {
            in_channels,
            input_size: self.patch_size,
            channels: self.disc_channels.clone(),
            kernels: self.disc_kernels.clone(),
            strides: self.disc_strides.clone(),
            hidden: self.disc_hidden,
            leaky_slope: self.disc_leaky_slope,
        };
        ArchConfig {
            generator: GeneratorConfig {
                width: self.generator_width,
                residual_blocks: self.residual_blocks,
                entry_kernel: self.entry_kernel,
                block_kernel: self.block_kernel,
                post_convs: self.post_convs,
                exit_kernel: self.exit_kernel,
            },
            color_critic: disc(3),
            texture_critic: disc(1),
            feature_weights: self.feature_weights.clone(),
            feature_layer: self.perceptual_layer.clone(),
            seed: self.seed,
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps <= 0.0 {
            return fail("adam_eps must be positive".into());
        }
        let side = 2 * self.blur_radius + 1;
        if self.patch_size < side {
            return fail(format!(
                "patch_size {} is smaller than the {side}x{side} blur kernel",
                self.patch_size
            ));
        }
        let arch = self.arch();
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.patch_size < arch.generator.min_input_size() {
            return fail(format!(
                "patch_size {} is below the generator minimum {}",
                self.patch_size,
                arch.generator.min_input_size()
            ));
        }
        self.blur_kernel().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Sets one top-level field of a serializable config from `key=value`.
pub(crate) fn assign<C: Serialize + DeserializeOwned>(cfg: &mut C, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
    let key = key.trim();
    let raw = raw.trim();
    let mut table = toml::Table::try_from(&*cfg).expect("config serializes");
    if !table.contains_key(key) {
        return Err(Error::Config(format!("unknown key '{key}'")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    table.insert(key.to_string(), value);
    *cfg = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
    Ok(())
}

pub(crate) fn config_hash<C: Serialize>(cfg: &C) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}
