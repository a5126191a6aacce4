//! Checkpoint archives.
//!
//! A checkpoint is one safetensors file. Its `manifest` metadata entry holds
//! JSON with the architecture, the full training config, the step count and
//! the sampler position. Tensors are named `generator.*`, `inverse.*`,
//! `color_critic.*` and `texture_critic.*` for parameters and
//! `adam.<optimizer>.<m|v>.<parameter>` for optimizer moments, where the
//! optimizers are `generator`, `color_critic` and `texture_critic`. The
//! frozen feature extractor is not stored; it is reloaded from the path in
//! the architecture.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SamplerState;
use crate::models::vgg::view_values;
use crate::models::{ArchConfig, FeatureExtractor, Generator, ModelBundle};
use crate::nn::{prefixed, Adam, Module};
use crate::tensor::{Scalar, Tensor};
use crate::training::{generator_params, StepSettings, TrainConfig, TrainState};

pub const FORMAT: &str = "photoenhance-checkpoint";
pub const VERSION: u32 = 1;
pub const LATEST: &str = "latest.safetensors";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub seed: u64,
    pub dtype: String,
    pub arch: ArchConfig,
    pub config: TrainConfig,
    pub config_hash: String,
    /// Update counts of the generator, color and texture optimizers.
    pub optimizer_steps: [u64; 3],
    pub sampler: Option<SamplerState>,
}

pub fn step_file_name(step: u64) -> String {
    format!("step-{step}.safetensors")
}

/// `latest` means the alias inside `run_dir`; anything else is a path.
pub fn resolve_checkpoint(spec: &str, run_dir: Option<&Path>) -> PathBuf {
    if spec == "latest" {
        run_dir.unwrap_or(Path::new(".")).join(LATEST)
    } else {
        PathBuf::from(spec)
    }
}

fn optimizer_entries<'a, T: Scalar>(name: &str, opt: &'a Adam<T>) -> Vec<(String, &'a Tensor<T>)> {
    let mut out = Vec::new();
    for (p, m) in opt.names().iter().zip(opt.first_moments()) {
        out.push((format!("adam.{name}.m.{p}"), m));
    }
    for (p, v) in opt.names().iter().zip(opt.second_moments()) {
        out.push((format!("adam.{name}.v.{p}"), v));
    }
    out
}

/// Serializes the state to bytes.
pub fn encode<T: Scalar>(state: &TrainState<T>, config: &TrainConfig) -> Result<Vec<u8>> {
    let b = &state.bundle;
    let mut tensors: Vec<(String, &Tensor<T>)> = generator_params(b);
    tensors.extend(prefixed("color_critic", b.color_critic.params()));
    tensors.extend(prefixed("texture_critic", b.texture_critic.params()));
    tensors.extend(optimizer_entries("generator", &state.generator_opt));
    tensors.extend(optimizer_entries("color_critic", &state.color_opt));
    tensors.extend(optimizer_entries("texture_critic", &state.texture_opt));
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        step: state.step,
        seed: b.arch().seed,
        dtype: format!("{:?}", T::DTYPE),
        arch: b.arch().clone(),
        config: config.clone(),
        config_hash: config.hash(),
        optimizer_steps: [
            state.generator_opt.step_count(),
            state.color_opt.step_count(),
            state.texture_opt.step_count(),
        ],
        sampler: state.sampler,
    };
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_le_bytes()))
        .collect();
    let views = bytes
        .iter()
        .map(|(n, s, d)| TensorView::new(T::DTYPE, s.clone(), d).map(|v| (n.clone(), v)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Init(e.to_string()))?;
    let meta = HashMap::from([(
        "manifest".to_string(),
        serde_json::to_string(&manifest).expect("manifest serializes"),
    )]);
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Init(e.to_string()))
}

/// Writes through a temporary file so readers never see a partial archive.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, config: &TrainConfig, path: &Path) -> Result<()> {
    write_atomic(path, &encode(state, config)?)
}

/// Writes `step-<N>` and refreshes the `latest` alias; returns the step file.
pub fn save_run_checkpoint<T: Scalar>(state: &TrainState<T>, config: &TrainConfig, run_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let bytes = encode(state, config)?;
    let path = run_dir.join(step_file_name(state.step));
    write_atomic(&path, &bytes)?;
    write_atomic(&run_dir.join(LATEST), &bytes)?;
    Ok(path)
}

struct Archive {
    path: PathBuf,
    bytes: Vec<u8>,
}

impl Archive {
    fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Archive {
            path: path.to_path_buf(),
            bytes,
        })
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn manifest(&self) -> Result<Manifest> {
        let (_, meta) = SafeTensors::read_metadata(&self.bytes).map_err(|e| self.bad(e.to_string()))?;
        let text = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("manifest"))
            .ok_or_else(|| self.bad("no manifest"))?;
        let m: Manifest = serde_json::from_str(text).map_err(|e| self.bad(format!("manifest: {e}")))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(self.bad(format!("unsupported format {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    fn tensors(&self) -> Result<SafeTensors<'_>> {
        SafeTensors::deserialize(&self.bytes).map_err(|e| self.bad(e.to_string()))
    }

    fn read<T: Scalar>(&self, st: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let v = st
            .tensor(name)
            .map_err(|_| self.bad(format!("missing tensor {name}")))?;
        if v.shape() != shape {
            return Err(self.bad(format!("{name} has shape {:?}, expected {shape:?}", v.shape())));
        }
        let data = view_values(&v).map_err(|e| self.bad(format!("{name}: {e}")))?;
        Tensor::from_vec(shape, data)
    }

    fn fill<T: Scalar, M: Module<T>>(&self, st: &SafeTensors<'_>, prefix: &str, module: &mut M) -> Result<usize> {
        let mut n = 0;
        for (name, p) in module.params_mut() {
            let full = format!("{prefix}.{name}");
            *p = self.read(st, &full, &p.shape().to_vec())?;
            n += 1;
        }
        Ok(n)
    }

    fn fill_optimizer<T: Scalar>(
        &self,
        st: &SafeTensors<'_>,
        name: &str,
        opt: &mut Adam<T>,
        step: u64,
    ) -> Result<usize> {
        let shapes: Vec<Vec<usize>> = opt.first_moments().iter().map(|t| t.shape().to_vec()).collect();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (p, shape) in opt.names().iter().zip(&shapes) {
            m.push(self.read(st, &format!("adam.{name}.m.{p}"), shape)?);
            v.push(self.read(st, &format!("adam.{name}.v.{p}"), shape)?);
        }
        let n = 2 * m.len();
        opt.restore(step, m, v);
        Ok(n)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Archive::open(path)?.manifest()
}

/// Loads only the generator, e.g. for inference.
pub fn load_generator(path: &Path) -> Result<(Generator<f32>, Manifest)> {
    let archive = Archive::open(path)?;
    let manifest = archive.manifest()?;
    let mut g = Generator::new(&manifest.arch.generator, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| archive.bad(e.to_string()))?;
    let st = archive.tensors()?;
    archive.fill(&st, "generator", &mut g)?;
    Ok((g, manifest))
}

/// Restores a full training state. The feature extractor is loaded from the
/// architecture's weight path unless one is supplied. Nothing is returned
/// unless every tensor matches.
pub fn load_train_state<T: Scalar>(
    path: &Path,
    features: Option<FeatureExtractor<T>>,
) -> Result<(TrainState<T>, TrainConfig)> {
    let archive = Archive::open(path)?;
    let manifest = archive.manifest()?;
    if manifest.config.arch() != manifest.arch {
        return Err(archive.bad("architecture does not match the stored config"));
    }
    let features = match features {
        Some(f) => f,
        None => FeatureExtractor::load(&manifest.arch.feature_weights, manifest.arch.layer()?)?,
    };
    let bundle = ModelBundle::with_features(&manifest.arch, features).map_err(|e| archive.bad(e.to_string()))?;
    let settings = StepSettings::from_config(&manifest.config)?;
    let mut state = TrainState::new(bundle, manifest.config.adam(), settings);
    let st = archive.tensors()?;
    let b = &mut state.bundle;
    let mut n = archive.fill(&st, "generator", &mut b.generator)?;
    n += archive.fill(&st, "inverse", &mut b.inverse)?;
    n += archive.fill(&st, "color_critic", &mut b.color_critic)?;
    n += archive.fill(&st, "texture_critic", &mut b.texture_critic)?;
    let [sg, sc, stx] = manifest.optimizer_steps;
    n += archive.fill_optimizer(&st, "generator", &mut state.generator_opt, sg)?;
    n += archive.fill_optimizer(&st, "color_critic", &mut state.color_opt, sc)?;
    n += archive.fill_optimizer(&st, "texture_critic", &mut state.texture_opt, stx)?;
    if st.len() != n {
        return Err(archive.bad(format!("{} unexpected tensors", st.len() - n)));
    }
    state.step = manifest.step;
    state.sampler = manifest.sampler;
    Ok((state, manifest.config))
}
