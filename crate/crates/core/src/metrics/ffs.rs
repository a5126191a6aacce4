//! A learned "would people fave this?" rater.
//!
//! Images are labeled high or low quality by splitting their faves-per-view
//! ratio at the median. A VGG-style stack topped with global average pooling
//! and a two-way linear head is then fine-tuned on random patches. An image
//! is scored by the mean high-quality probability over five fixed crops: the
//! four corners and the center.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::imaging::{load_image, quantize, ImageBatch};
use crate::models::vgg::{normalization_from_metadata, view_values, VggTrace};
use crate::models::{LayerId, VggStack};
use crate::nn::{Adam, AdamConfig, Init, Linear, Module};
use crate::tensor::Tensor;
use crate::training::{assign, config_hash};

pub const FFS_PATCH: usize = 224;
pub const FFS_THRESHOLD: f64 = 0.5;
const FORMAT: &str = "photoenhance-ffs";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaveEvidence {
    Counts { views: u64, faves: u64 },
    Label(u8),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaveRecord {
    pub path: PathBuf,
    pub evidence: FaveEvidence,
    /// 1-based source line, 0 when built in code.
    pub line: usize,
}

impl FaveRecord {
    pub fn counts(path: impl Into<PathBuf>, views: u64, faves: u64) -> Self {
        FaveRecord {
            path: path.into(),
            evidence: FaveEvidence::Counts { views, faves },
            line: 0,
        }
    }

    pub fn labeled(path: impl Into<PathBuf>, label: u8) -> Self {
        FaveRecord {
            path: path.into(),
            evidence: FaveEvidence::Label(label),
            line: 0,
        }
    }

    /// `faves / views`, or `None` for directly labeled records.
    pub fn score(&self) -> Result<Option<f64>> {
        match self.evidence {
            FaveEvidence::Label(_) => Ok(None),
            FaveEvidence::Counts { views: 0, .. } => Err(Error::Record {
                line: self.line,
                reason: format!("{} has 0 views and no label", self.path.display()),
            }),
            FaveEvidence::Counts { views, faves } => Ok(Some(faves as f64 / views as f64)),
        }
    }
}

/// Parses `path<TAB>views<TAB>faves` or `path<TAB>label` lines. Blank lines
/// and `#` comments are skipped; relative paths are resolved against `base`.
pub fn parse_fave_records(text: &str, base: &Path) -> Result<Vec<FaveRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Record { line, reason };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let count = |s: &str, what: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| bad(format!("{what} '{s}' is not a non-negative integer")))
        };
        let evidence = match fields.len() {
            2 => match fields[1].trim() {
                "0" => FaveEvidence::Label(0),
                "1" => FaveEvidence::Label(1),
                other => return Err(bad(format!("label '{other}' must be 0 or 1"))),
            },
            3 => FaveEvidence::Counts {
                views: count(fields[1], "views")?,
                faves: count(fields[2], "faves")?,
            },
            n => return Err(bad(format!("expected 2 or 3 tab-separated fields, found {n}"))),
        };
        if fields[0].is_empty() {
            return Err(bad("empty path".into()));
        }
        let path = Path::new(fields[0]);
        out.push(FaveRecord {
            path: if path.is_absolute() {
                path.to_path_buf()
            } else {
                base.join(path)
            },
            evidence,
            line,
        });
    }
    Ok(out)
}

/// Reads a record file; relative paths are taken from the file's directory.
pub fn read_fave_records(path: &Path) -> Result<Vec<FaveRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fave_records(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub path: PathBuf,
    /// 1 for high quality, 0 for low.
    pub label: u8,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Splits scored records at their median: above is 1, at or below is 0.
/// Directly labeled records keep their label.
pub fn label_faves(records: &[FaveRecord]) -> Result<Vec<LabeledImage>> {
    let scores = records.iter().map(FaveRecord::score).collect::<Result<Vec<_>>>()?;
    let mut sorted: Vec<f64> = scores.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mid = if sorted.is_empty() { 0.0 } else { median(&sorted) };
    Ok(records
        .iter()
        .zip(&scores)
        .map(|(r, s)| LabeledImage {
            path: r.path.clone(),
            label: match (r.evidence, s) {
                (FaveEvidence::Label(l), _) => l,
                (_, Some(v)) => u8::from(*v > mid),
                (_, None) => unreachable!("counts always score"),
            },
        })
        .collect())
}

/// Anything mapping square RGB patches to a high-quality probability.
pub trait PatchClassifier {
    fn patch_size(&self) -> usize;
    /// One probability per patch of an `(n, 3, p, p)` batch.
    fn positive_probabilities(&self, patches: &ImageBatch) -> Result<Vec<f64>>;
}

/// `(top, left)` of the four corner crops and the center crop, in that order.
/// Depends only on the image size.
pub fn crop_rects(height: usize, width: usize, patch: usize) -> Result<[(usize, usize); 5]> {
    if height < patch || width < patch {
        return Err(Error::arg(format!(
            "scoring needs images of at least {patch}x{patch}, got {height}x{width}"
        )));
    }
    let (b, r) = (height - patch, width - patch);
    Ok([(0, 0), (0, r), (b, 0), (b, r), (b / 2, r / 2)])
}

fn as_rgb(img: &ImageBatch) -> Result<ImageBatch> {
    if img.channels() == 3 {
        return Ok(img.clone());
    }
    ImageBatch::new(crate::imaging::replicate_channels(img.tensor())?)
}

/// Mean high-quality probability over the five crops of a single image.
pub fn ffs_score<C: PatchClassifier + ?Sized>(classifier: &C, img: &ImageBatch) -> Result<f64> {
    if img.batch() != 1 {
        return Err(Error::arg(format!("ffs_score takes one image, got {}", img.batch())));
    }
    let p = classifier.patch_size();
    let rects = crop_rects(img.height(), img.width(), p)?;
    let mut unique: Vec<(usize, usize)> = Vec::new();
    for r in rects {
        if !unique.contains(&r) {
            unique.push(r);
        }
    }
    let rgb = as_rgb(img)?;
    let crops = unique
        .iter()
        .map(|&(t, l)| rgb.crop(t, l, p, p))
        .collect::<Result<Vec<_>>>()?;
    let probs = classifier.positive_probabilities(&ImageBatch::concat(&crops)?)?;
    if unique.len() == 1 {
        return Ok(probs[0]);
    }
    let total: f64 = rects
        .iter()
        .map(|r| probs[unique.iter().position(|u| u == r).expect("listed")])
        .sum();
    Ok(total / rects.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfsConfig {
    /// Archive holding the initial backbone weights.
    pub feature_weights: PathBuf,
    pub layer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub patch_size: usize,
    /// Train only the head.
    pub freeze_backbone: bool,
    pub seed: u64,
}

impl Default for FfsConfig {
    fn default() -> Self {
        FfsConfig {
            feature_weights: PathBuf::from("vgg19.safetensors"),
            layer: "relu5_4".into(),
            learning_rate: 5e-5,
            batch_size: 25,
            max_epochs: 30,
            patience: 3,
            validation_fraction: 0.2,
            patch_size: FFS_PATCH,
            freeze_backbone: false,
            seed: 0,
        }
    }
}

impl FfsConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value`, where `value` is TOML (bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        assign(self, assignment)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive");
        }
        self.layer
            .parse::<LayerId>()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FfsManifest {
    format: String,
    version: u32,
    layer: String,
    patch_size: usize,
    threshold: f64,
}

/// VGG stack, global average pooling, per-channel standardization and a
/// two-way linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct FfsScorer {
    pub backbone: VggStack<f32>,
    pub head: Linear<f32>,
    /// Pooled-feature shift and scale applied before the head.
    pool_mean: Vec<f32>,
    pool_std: Vec<f32>,
    layer: LayerId,
    mean: [f64; 3],
    std: [f64; 3],
    patch: usize,
}

struct ScorerTrace {
    backbone: VggTrace<f32>,
    pooled: Tensor<f32>,
    feature_hw: (usize, usize),
}

impl FfsScorer {
    /// Cuts `backbone` at `layer` and attaches a zeroed head that scores
    /// every patch 0.5 until trained.
    pub fn new(
        backbone: VggStack<f32>,
        layer: LayerId,
        normalization: ([f64; 3], [f64; 3]),
        patch: usize,
    ) -> Result<Self> {
        let channels = backbone.channels_at(layer).ok_or_else(|| {
            Error::Init(format!(
                "layer {layer} needs {} convolutions, the backbone has {}",
                layer.convs_needed(),
                backbone.depth()
            ))
        })?;
        if patch >> layer.pools_before() == 0 {
            return Err(Error::Init(format!(
                "{patch} px patches are too small for layer {layer}"
            )));
        }
        let mut head = Linear::new(channels, 2, Init::FanIn, &mut ChaCha8Rng::seed_from_u64(0));
        head.weight.data_mut().fill(0.0);
        head.bias.data_mut().fill(0.0);
        Ok(FfsScorer {
            backbone: backbone.truncated(layer.convs_needed()),
            head,
            pool_mean: vec![0.0; channels],
            pool_std: vec![1.0; channels],
            layer,
            mean: normalization.0,
            std: normalization.1,
            patch,
        })
    }

    /// Initializes the backbone from a feature-weight archive.
    pub fn from_config(cfg: &FfsConfig) -> Result<Self> {
        cfg.validate()?;
        let (stack, meta) = VggStack::load(&cfg.feature_weights)?;
        let layer: LayerId = cfg.layer.parse()?;
        Self::new(stack, layer, normalization_from_metadata(&meta)?, cfg.patch_size)
    }

    /// Sets the pooled-feature standardization to the per-channel mean and
    /// deviation over all patches in `batches`.
    pub fn calibrate(&mut self, batches: &[ImageBatch]) -> Result<()> {
        let ch = self.pool_mean.len();
        self.pool_mean.fill(0.0);
        self.pool_std.fill(1.0);
        let mut rows = Vec::new();
        for b in batches {
            rows.extend(self.pool(b)?.0.data().iter().map(|&v| f64::from(v)));
        }
        let n = rows.len() / ch;
        if n == 0 {
            return Err(Error::arg("calibration needs at least one patch"));
        }
        for k in 0..ch {
            let col: Vec<f64> = (0..n).map(|i| rows[i * ch + k]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            self.pool_mean[k] = m as f32;
            self.pool_std[k] = if sd > 1e-6 { sd as f32 } else { 1.0 };
        }
        Ok(())
    }

    pub fn layer(&self) -> LayerId {
        self.layer
    }

    fn normalize(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let (_, _, h, w) = x.dims4();
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let c = i % 3;
            let (m, s) = (self.mean[c] as f32, (1.0 / self.std[c]) as f32);
            chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
        out
    }

    /// Standardized pooled features with the backbone trace.
    fn pool(&self, x: &ImageBatch) -> Result<(Tensor<f32>, VggTrace<f32>, (usize, usize))> {
        let (n, c, h, w) = x.dims4();
        if c != 3 || h != self.patch || w != self.patch {
            return Err(Error::arg(format!(
                "scorer expects (n, 3, {p}, {p}) patches, got {:?}",
                x.tensor().shape(),
                p = self.patch
            )));
        }
        let (feat, backbone) = self.backbone.forward_trace(&self.normalize(x.tensor()), self.layer)?;
        let (_, ch, fh, fw) = feat.dims4();
        let plane = fh * fw;
        let pooled = Tensor::from_fn(&[n, ch], |i| {
            let k = i % ch;
            let avg = feat.data()[i * plane..(i + 1) * plane].iter().sum::<f32>() / plane as f32;
            (avg - self.pool_mean[k]) / self.pool_std[k]
        });
        Ok((pooled, backbone, (fh, fw)))
    }

    fn forward_trace(&self, x: &ImageBatch) -> Result<(Tensor<f32>, ScorerTrace)> {
        let (pooled, backbone, feature_hw) = self.pool(x)?;
        let logits = self.head.forward(&pooled);
        Ok((
            logits,
            ScorerTrace {
                backbone,
                pooled,
                feature_hw,
            },
        ))
    }

    /// Mean cross-entropy of a labeled batch; accumulates into `grads`.
    fn loss_and_grads(&self, x: &ImageBatch, labels: &[u8], grads: &mut FfsScorer, frozen: bool) -> Result<f64> {
        let (logits, trace) = self.forward_trace(x)?;
        let n = labels.len();
        let mut d_logits = Tensor::zeros(&[n, 2]);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = softmax2(logits.data()[2 * i], logits.data()[2 * i + 1]);
            let p_true = if y == 1 { p[1] } else { p[0] };
            loss -= p_true.max(f64::MIN_POSITIVE).ln();
            for k in 0..2 {
                let target = f64::from(u8::from(usize::from(y) == k));
                d_logits.data_mut()[2 * i + k] = ((p[k] - target) / n as f64) as f32;
            }
        }
        let d_pooled = self
            .head
            .backward(&trace.pooled, &d_logits, Some(&mut grads.head), !frozen);
        if let Some(d_pooled) = d_pooled {
            let (fh, fw) = trace.feature_hw;
            let plane = fh * fw;
            let ch = d_pooled.shape()[1];
            let d_feat = Tensor::from_fn(&[n, ch, fh, fw], |i| {
                let j = i / plane;
                d_pooled.data()[j] / (self.pool_std[j % ch] * plane as f32)
            });
            self.backbone
                .backward_with_grads(&trace.backbone, &d_feat, Some(&mut grads.backbone), false);
        }
        Ok(loss / n as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let pool = self.pool_tensors();
        let mut params = self.params();
        params.extend([("pool.mean".to_string(), &pool[0]), ("pool.std".to_string(), &pool[1])]);
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_le_bytes()))
            .collect();
        let views = bytes
            .iter()
            .map(|(n, s, d)| TensorView::new(safetensors::Dtype::F32, s.clone(), d).map(|v| (n.clone(), v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Init(e.to_string()))?;
        let triple = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let manifest = FfsManifest {
            format: FORMAT.into(),
            version: VERSION,
            layer: self.layer.to_string(),
            patch_size: self.patch,
            threshold: FFS_THRESHOLD,
        };
        let meta = HashMap::from([
            (
                "ffs".to_string(),
                serde_json::to_string(&manifest).expect("manifest serializes"),
            ),
            ("input_mean".to_string(), triple(self.mean)),
            ("input_std".to_string(), triple(self.std)),
        ]);
        let out = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Init(e.to_string()))?;
        write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let (stack, meta) = VggStack::<f32>::load(path).map_err(|e| bad(e.to_string()))?;
        let manifest: FfsManifest =
            serde_json::from_str(meta.get("ffs").ok_or_else(|| bad("not a scorer archive".into()))?)
                .map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let layer: LayerId = manifest.layer.parse().map_err(|e: Error| bad(e.to_string()))?;
        if stack.depth() != layer.convs_needed() {
            return Err(bad(format!("backbone depth {} does not end at {layer}", stack.depth())));
        }
        let mut scorer = Self::new(stack, layer, normalization_from_metadata(&meta)?, manifest.patch_size)
            .map_err(|e| bad(e.to_string()))?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let [mut pool_mean, mut pool_std] = scorer.pool_tensors();
        for (name, p) in [
            ("head.weight", &mut scorer.head.weight),
            ("head.bias", &mut scorer.head.bias),
            ("pool.mean", &mut pool_mean),
            ("pool.std", &mut pool_std),
        ] {
            let v = st.tensor(name).map_err(|_| bad(format!("missing tensor {name}")))?;
            if v.shape() != p.shape() {
                return Err(bad(format!(
                    "{name} has shape {:?}, expected {:?}",
                    v.shape(),
                    p.shape()
                )));
            }
            *p = Tensor::from_vec(p.shape(), view_values(&v).map_err(&bad)?)?;
        }
        scorer.pool_mean = pool_mean.data().to_vec();
        scorer.pool_std = pool_std.data().to_vec();
        Ok(scorer)
    }

    fn pool_tensors(&self) -> [Tensor<f32>; 2] {
        let n = self.pool_mean.len();
        [
            Tensor::from_vec(&[n], self.pool_mean.clone()).expect("sized"),
            Tensor::from_vec(&[n], self.pool_std.clone()).expect("sized"),
        ]
    }
}

fn softmax2(a: f32, b: f32) -> [f64; 2] {
    let (a, b) = (f64::from(a), f64::from(b));
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

impl Module<f32> for FfsScorer {
    fn params(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = self.backbone.params();
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = self.backbone.params_mut();
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }
}

impl PatchClassifier for FfsScorer {
    fn patch_size(&self) -> usize {
        self.patch
    }

    fn positive_probabilities(&self, patches: &ImageBatch) -> Result<Vec<f64>> {
        let (logits, _) = self.forward_trace(patches)?;
        Ok(logits.data().chunks(2).map(|l| softmax2(l[0], l[1])[1]).collect())
    }
}

/// A decoded training image kept as 8-bit planar RGB.
struct Sample {
    codes: Vec<u8>,
    height: usize,
    width: usize,
    label: u8,
}

impl Sample {
    fn load(item: &LabeledImage, patch: usize) -> Result<Self> {
        if item.label > 1 {
            return Err(Error::Dataset(format!(
                "{}: label {} is not 0 or 1",
                item.path.display(),
                item.label
            )));
        }
        let img = as_rgb(&load_image(&item.path)?)?;
        if img.height() < patch || img.width() < patch {
            return Err(Error::Ingestion {
                path: item.path.clone(),
                reason: format!("{}x{} is smaller than the {patch} px patch", img.height(), img.width()),
            });
        }
        Ok(Sample {
            codes: img.tensor().data().iter().map(|&v| quantize(v)).collect(),
            height: img.height(),
            width: img.width(),
            label: item.label,
        })
    }

    fn image(&self) -> ImageBatch {
        let t = Tensor::from_vec(
            &[1, 3, self.height, self.width],
            self.codes.iter().map(|&c| f32::from(c) / 255.0).collect(),
        )
        .expect("sized buffer");
        ImageBatch::new(t).expect("valid range")
    }

    fn patch(&self, top: usize, left: usize, p: usize) -> Tensor<f32> {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[1, 3, p, p], |i| {
            let (c, y, x) = (i / (p * p), (i / p) % p, i % p);
            f32::from(self.codes[c * h * w + (top + y) * w + left + x]) / 255.0
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FfsEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FfsTrainReport {
    pub history: Vec<FfsEpoch>,
    /// Epoch whose weights were kept (1-based, 0 if none ran).
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub train_count: usize,
    pub val_count: usize,
}

/// Fraction of `items` whose five-crop score falls on the side of the
/// threshold matching their label.
pub fn accuracy<C: PatchClassifier + ?Sized>(classifier: &C, items: &[LabeledImage]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Dataset("no images to evaluate".into()));
    }
    let mut hits = 0;
    for item in items {
        let s = ffs_score(classifier, &load_image(&item.path)?)?;
        hits += usize::from(u8::from(s > FFS_THRESHOLD) == item.label);
    }
    Ok(hits as f64 / items.len() as f64)
}

fn accuracy_on(scorer: &FfsScorer, samples: &[&Sample]) -> Result<f64> {
    let mut hits = 0;
    for s in samples {
        let score = ffs_score(scorer, &s.image())?;
        hits += usize::from(u8::from(score > FFS_THRESHOLD) == s.label);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Trains a scorer initialized from `cfg.feature_weights`.
pub fn train_ffs(data: &[LabeledImage], cfg: &FfsConfig) -> Result<(FfsScorer, FfsTrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("no labeled images".into()));
    }
    fit(FfsScorer::from_config(cfg)?, data, cfg, true)
}

/// Continues training `scorer` with its current standardization; its patch
/// size and layer win over `cfg`. Keeps the weights of the epoch with the
/// best validation accuracy.
pub fn train_ffs_from(
    scorer: FfsScorer,
    data: &[LabeledImage],
    cfg: &FfsConfig,
) -> Result<(FfsScorer, FfsTrainReport)> {
    fit(scorer, data, cfg, false)
}

fn fit(
    mut scorer: FfsScorer,
    data: &[LabeledImage],
    cfg: &FfsConfig,
    calibrate: bool,
) -> Result<(FfsScorer, FfsTrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("no labeled images".into()));
    }
    let p = scorer.patch;
    let samples = data.iter().map(|d| Sample::load(d, p)).collect::<Result<Vec<_>>>()?;
    if samples.iter().all(|s| s.label == samples[0].label) {
        return Err(Error::Dataset("labeled images must cover both classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * cfg.validation_fraction).round() as usize).min(samples.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut train: Vec<usize> = train_idx.to_vec();
    if calibrate {
        let batches = train
            .chunks(cfg.batch_size)
            .map(|chunk| {
                let centers: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let s = &samples[i];
                        s.patch((s.height - p) / 2, (s.width - p) / 2, p)
                    })
                    .collect();
                ImageBatch::new(Tensor::concat_batch(&centers)?)
            })
            .collect::<Result<Vec<_>>>()?;
        scorer.calibrate(&batches)?;
    }

    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &scorer.params());
    let mut best = scorer.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        train.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in train.chunks(cfg.batch_size) {
            let mut parts = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &samples[i];
                let top = rng.random_range(0..=s.height - p);
                let left = rng.random_range(0..=s.width - p);
                parts.push(s.patch(top, left, p));
                labels.push(s.label);
            }
            let x = ImageBatch::new(Tensor::concat_batch(&parts)?)?;
            let mut grads = scorer.zeros_like();
            let loss = scorer.loss_and_grads(&x, &labels, &mut grads, cfg.freeze_backbone)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { term: "ffs loss" });
            }
            adam.update(scorer.params_mut(), grads.params());
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = if val.is_empty() {
            f64::NAN
        } else {
            accuracy_on(&scorer, &val)?
        };
        history.push(FfsEpoch {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
        if val.is_empty() || val_accuracy > best_acc {
            best = scorer.clone();
            best_acc = val_accuracy;
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let report = FfsTrainReport {
        history,
        best_epoch,
        best_accuracy: if best_epoch == 0 { f64::NAN } else { best_acc },
        train_count: train.len(),
        val_count: val.len(),
    };
    Ok((best, report))
}
