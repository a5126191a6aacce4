//! VGG-19 style feature stack used as the frozen perceptual network.
//!
//! Weight archives are safetensors files using torchvision's naming for the
//! `features` sequential. Convolutions sit at these indices:
//!
//! | layer    | index | layer    | index | layer    | index |
//! |----------|-------|----------|-------|----------|-------|
//! | conv1_1  | 0     | conv3_3  | 14    | conv4_4  | 25    |
//! | conv1_2  | 2     | conv3_4  | 16    | conv5_1  | 28    |
//! | conv2_1  | 5     | conv4_1  | 19    | conv5_2  | 30    |
//! | conv2_2  | 7     | conv4_2  | 21    | conv5_3  | 32    |
//! | conv3_1  | 10    | conv4_3  | 23    | conv5_4  | 34    |
//! | conv3_2  | 12    |          |       |          |       |
//!
//! Each convolution is followed by a ReLU at the next index and pools sit at
//! 4, 9, 18, 27 and 36. Tensors are `features.{index}.weight` with shape
//! `(out, in, 3, 3)` and `features.{index}.bias`. Archives may stop early
//! and may use narrower widths; the stack is whatever the file contains.
//! The optional metadata keys `input_mean` and `input_std` (three
//! comma-separated floats) override the ImageNet normalization applied to
//! `[0, 1]` inputs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::nn::{max_pool2x2, max_pool2x2_backward, relu_backward, relu_inplace, Conv2d, Init, Module, PoolIndices};
use crate::tensor::{Scalar, Tensor};

pub const VGG19_BLOCKS: [usize; 5] = [2, 2, 4, 4, 4];
pub const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    Pool,
}

/// A named point in the stack: `conv3_2`, `relu5_4`, `pool2`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerId {
    pub kind: LayerKind,
    pub block: usize,
    /// 1-based position within the block; unused for pools.
    pub index: usize,
}

impl LayerId {
    pub const DEFAULT: LayerId = LayerId {
        kind: LayerKind::Relu,
        block: 5,
        index: 4,
    };

    /// Position in the op sequence, which equals the torchvision index.
    pub fn op_index(&self) -> usize {
        let before: usize = VGG19_BLOCKS[..self.block - 1].iter().map(|n| 2 * n + 1).sum();
        match self.kind {
            LayerKind::Conv => before + 2 * (self.index - 1),
            LayerKind::Relu => before + 2 * (self.index - 1) + 1,
            LayerKind::Pool => before + 2 * VGG19_BLOCKS[self.block - 1],
        }
    }

    /// Number of convolutions evaluated up to and including this layer.
    pub fn convs_needed(&self) -> usize {
        let before: usize = VGG19_BLOCKS[..self.block - 1].iter().sum();
        match self.kind {
            LayerKind::Pool => before + VGG19_BLOCKS[self.block - 1],
            _ => before + self.index,
        }
    }

    /// Pools applied before this layer's output.
    pub fn pools_before(&self) -> usize {
        match self.kind {
            LayerKind::Pool => self.block,
            _ => self.block - 1,
        }
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::arg(format!(
                "unknown feature layer '{s}', expected e.g. relu5_4, conv3_1 or pool2"
            ))
        };
        let (kind, rest) = if let Some(r) = s.strip_prefix("relu") {
            (LayerKind::Relu, r)
        } else if let Some(r) = s.strip_prefix("conv") {
            (LayerKind::Conv, r)
        } else if let Some(r) = s.strip_prefix("pool") {
            (LayerKind::Pool, r)
        } else {
            return Err(bad());
        };
        let (block, index) = match kind {
            LayerKind::Pool => (rest.parse::<usize>().map_err(|_| bad())?, 0),
            _ => {
                let (b, i) = rest.split_once('_').ok_or_else(bad)?;
                (b.parse().map_err(|_| bad())?, i.parse().map_err(|_| bad())?)
            }
        };
        if !(1..=5).contains(&block) {
            return Err(bad());
        }
        if kind != LayerKind::Pool && !(1..=VGG19_BLOCKS[block - 1]).contains(&index) {
            return Err(bad());
        }
        Ok(LayerId { kind, block, index })
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv => write!(f, "conv{}_{}", self.block, self.index),
            LayerKind::Relu => write!(f, "relu{}_{}", self.block, self.index),
            LayerKind::Pool => write!(f, "pool{}", self.block),
        }
    }
}

/// Torchvision index of the `i`-th convolution (0-based, block-major).
pub fn conv_archive_index(i: usize) -> usize {
    let mut left = i;
    for (b, &n) in VGG19_BLOCKS.iter().enumerate() {
        if left < n {
            return LayerId {
                kind: LayerKind::Conv,
                block: b + 1,
                index: left + 1,
            }
            .op_index();
        }
        left -= n;
    }
    panic!("VGG-19 has 16 convolutions, asked for #{i}");
}

fn block_of_conv(i: usize) -> (usize, usize) {
    let mut left = i;
    for (b, &n) in VGG19_BLOCKS.iter().enumerate() {
        if left < n {
            return (b, left);
        }
        left -= n;
    }
    panic!("conv #{i} out of range");
}

/// The convolution weights of a (possibly truncated) VGG-19 feature stack.
#[derive(Clone, Debug, PartialEq)]
pub struct VggStack<T> {
    convs: Vec<Conv2d<T>>,
}

enum Op<T> {
    Conv { conv: usize, input: Tensor<T> },
    Relu { output: Tensor<T> },
    Pool { indices: PoolIndices },
}

pub struct VggTrace<T> {
    ops: Vec<Op<T>>,
}

impl<T: Scalar> VggStack<T> {
    /// Random stack with per-block widths, He-initialized. `depth` limits how
    /// many convolutions are created (at most 16).
    pub fn random(widths: [usize; 5], depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = depth.min(16);
        let mut cin = 3;
        let convs = (0..depth)
            .map(|i| {
                let (b, _) = block_of_conv(i);
                let c = Conv2d::same(cin, widths[b], 3, 1, Init::He, &mut rng);
                cin = widths[b];
                c
            })
            .collect();
        VggStack { convs }
    }

    pub fn from_convs(convs: Vec<Conv2d<T>>) -> Result<Self> {
        if convs.len() > 16 {
            return Err(Error::arg("a VGG-19 stack has at most 16 convolutions"));
        }
        let mut cin = 3;
        for (i, c) in convs.iter().enumerate() {
            if c.kernel() != 3 || c.in_channels() != cin || c.stride != 1 || c.padding != 1 {
                return Err(Error::arg(format!("convolution #{i} does not fit a VGG stack")));
            }
            cin = c.out_channels();
        }
        Ok(VggStack { convs })
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    pub fn convs(&self) -> &[Conv2d<T>] {
        &self.convs
    }

    pub fn truncated(&self, depth: usize) -> Self {
        VggStack {
            convs: self.convs[..depth.min(self.convs.len())].to_vec(),
        }
    }

    /// Channel count at the output of `layer`.
    pub fn channels_at(&self, layer: LayerId) -> Option<usize> {
        let need = layer.convs_needed();
        (need >= 1 && need <= self.convs.len()).then(|| self.convs[need - 1].out_channels())
    }

    pub fn forward(&self, x: &Tensor<T>, layer: LayerId) -> Result<Tensor<T>> {
        Ok(self.run(x, layer, false)?.0)
    }

    pub fn forward_trace(&self, x: &Tensor<T>, layer: LayerId) -> Result<(Tensor<T>, VggTrace<T>)> {
        let (y, t) = self.run(x, layer, true)?;
        Ok((y, t.expect("trace requested")))
    }

    fn run(&self, x: &Tensor<T>, layer: LayerId, trace: bool) -> Result<(Tensor<T>, Option<VggTrace<T>>)> {
        let need = layer.convs_needed();
        if need > self.convs.len() {
            return Err(Error::Init(format!(
                "feature layer {layer} needs {need} convolutions, the weights provide {}",
                self.convs.len()
            )));
        }
        if x.rank() != 4 || x.shape()[1] != 3 {
            return Err(Error::arg(format!(
                "feature extractor expects (n, 3, h, w), got {:?}",
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        let min = 1usize << layer.pools_before();
        if h < min || w < min {
            return Err(Error::arg(format!(
                "feature layer {layer} needs inputs of at least {min}x{min}"
            )));
        }
        let target = layer.op_index();
        let mut ops = Vec::new();
        let mut cur = x.clone();
        let mut conv = 0;
        let mut op = 0;
        'blocks: for &n in VGG19_BLOCKS.iter() {
            for _ in 0..n {
                let y = self.convs[conv].forward(&cur);
                if trace {
                    ops.push(Op::Conv {
                        conv,
                        input: std::mem::replace(&mut cur, y),
                    });
                } else {
                    cur = y;
                }
                conv += 1;
                if op == target {
                    break 'blocks;
                }
                op += 1;
                relu_inplace(&mut cur);
                if trace {
                    ops.push(Op::Relu { output: cur.clone() });
                }
                if op == target {
                    break 'blocks;
                }
                op += 1;
            }
            let (y, indices) = max_pool2x2(&cur);
            cur = y;
            if trace {
                ops.push(Op::Pool { indices });
            }
            if op == target {
                break;
            }
            op += 1;
        }
        Ok((cur, trace.then_some(VggTrace { ops })))
    }

    /// Input gradient of a traced pass. The weights receive nothing.
    pub fn backward(&self, trace: &VggTrace<T>, d_out: &Tensor<T>) -> Tensor<T> {
        self.backward_with_grads(trace, d_out, None, true)
            .expect("dx requested")
    }

    /// Backward pass that also accumulates weight gradients, for fine-tuning.
    pub fn backward_with_grads(
        &self,
        trace: &VggTrace<T>,
        d_out: &Tensor<T>,
        mut grads: Option<&mut VggStack<T>>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut d = d_out.clone();
        for (k, op) in trace.ops.iter().enumerate().rev() {
            d = match op {
                Op::Conv { conv, input } => {
                    let g = grads.as_deref_mut().map(|g| &mut g.convs[*conv]);
                    match self.convs[*conv].backward(input, &d, g, want_dx || k > 0) {
                        Some(dx) => dx,
                        None => return None,
                    }
                }
                Op::Relu { output } => {
                    relu_backward(&mut d, output);
                    d
                }
                Op::Pool { indices } => max_pool2x2_backward(&d, indices),
            };
        }
        Some(d)
    }

    /// Reads an archive. Convolutions are taken in order until the first
    /// missing index.
    pub fn load(path: &Path) -> Result<(Self, HashMap<String, String>)> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Init(format!("cannot read feature weights {}: {e}", path.display())))?;
        let bad = |reason: String| Error::Init(format!("feature weights {}: {reason}", path.display()));
        let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let metadata = meta.metadata().clone().unwrap_or_default();
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut convs = Vec::new();
        let mut cin = 3;
        for i in 0..16 {
            let idx = conv_archive_index(i);
            let Ok(wv) = st.tensor(&format!("features.{idx}.weight")) else {
                break;
            };
            let bv = st
                .tensor(&format!("features.{idx}.bias"))
                .map_err(|_| bad(format!("features.{idx}.bias missing")))?;
            let ws = wv.shape().to_vec();
            if ws.len() != 4 || ws[1] != cin || ws[2] != 3 || ws[3] != 3 {
                return Err(bad(format!(
                    "features.{idx}.weight has shape {ws:?}, expected ({{out}}, {cin}, 3, 3)"
                )));
            }
            if bv.shape() != [ws[0]] {
                return Err(bad(format!("features.{idx}.bias has shape {:?}", bv.shape())));
            }
            let weight = Tensor::from_vec(&ws, view_values(&wv).map_err(&bad)?)?;
            let bias = Tensor::from_vec(&[ws[0]], view_values(&bv).map_err(&bad)?)?;
            convs.push(Conv2d {
                weight,
                bias,
                stride: 1,
                padding: 1,
            });
            cin = ws[0];
        }
        if convs.is_empty() {
            return Err(bad("no convolution weights found (expected features.0.weight)".into()));
        }
        Ok((VggStack { convs }, metadata))
    }

    /// Writes the stack in the archive layout read by [`VggStack::load`].
    pub fn save(&self, path: &Path, metadata: Option<HashMap<String, String>>) -> Result<()> {
        let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let idx = conv_archive_index(i);
            entries.push((
                format!("features.{idx}.weight"),
                c.weight.shape().to_vec(),
                c.weight.to_le_bytes(),
            ));
            entries.push((
                format!("features.{idx}.bias"),
                c.bias.shape().to_vec(),
                c.bias.to_le_bytes(),
            ));
        }
        let views = entries
            .iter()
            .map(|(n, s, b)| Ok((n.clone(), TensorView::new(T::DTYPE, s.clone(), b)?)))
            .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
            .map_err(|e| Error::Init(e.to_string()))?;
        safetensors::serialize_to_file(views, metadata, path).map_err(|e| match e {
            safetensors::SafeTensorError::IoError(io) => Error::io(path, io),
            other => Error::Init(other.to_string()),
        })
    }
}

impl<T: Scalar> Module<T> for VggStack<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let idx = conv_archive_index(i);
            out.push((format!("features.{idx}.weight"), &c.weight));
            out.push((format!("features.{idx}.bias"), &c.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            let idx = conv_archive_index(i);
            out.push((format!("features.{idx}.weight"), &mut c.weight));
            out.push((format!("features.{idx}.bias"), &mut c.bias));
        }
        out
    }
}

/// Decodes a view of either float dtype into `T`.
pub(crate) fn view_values<T: Scalar>(v: &TensorView<'_>) -> std::result::Result<Vec<T>, String> {
    let raw = v.data();
    match v.dtype() {
        Dtype::F32 => Ok(raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect()),
        Dtype::F64 => Ok(raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect()),
        other => Err(format!("unsupported dtype {other:?}")),
    }
}

/// Reads `input_mean` / `input_std`, falling back to the ImageNet values.
pub(crate) fn normalization_from_metadata(meta: &HashMap<String, String>) -> Result<([f64; 3], [f64; 3])> {
    let triple = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
        match meta.get(key) {
            None => Ok(default),
            Some(s) => {
                let vals: Vec<f64> = s
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Init(format!("metadata {key} is not three floats: {s}")))?;
                vals.try_into()
                    .map_err(|_| Error::Init(format!("metadata {key} is not three floats: {s}")))
            }
        }
    };
    Ok((triple("input_mean", IMAGENET_MEAN)?, triple("input_std", IMAGENET_STD)?))
}

/// Frozen perceptual network: normalization adapter plus a VGG stack cut at
/// one layer. Callers pass `[0, 1]` images.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    stack: VggStack<T>,
    layer: LayerId,
    mean: [f64; 3],
    std: [f64; 3],
}

pub struct FeatureTrace<T> {
    inner: VggTrace<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(stack: VggStack<T>, layer: LayerId, mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        let need = layer.convs_needed();
        if need > stack.depth() {
            return Err(Error::Init(format!(
                "feature layer {layer} needs {need} convolutions, the weights provide {}",
                stack.depth()
            )));
        }
        if std.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::Init("normalization std must be positive".into()));
        }
        Ok(FeatureExtractor {
            stack: stack.truncated(need),
            layer,
            mean,
            std,
        })
    }

    pub fn load(path: &Path, layer: LayerId) -> Result<Self> {
        let (stack, meta) = VggStack::load(path)?;
        let (mean, std) = normalization_from_metadata(&meta)?;
        Self::new(stack, layer, mean, std)
    }

    pub fn layer(&self) -> LayerId {
        self.layer
    }

    pub fn stack(&self) -> &VggStack<T> {
        &self.stack
    }

    pub fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        (self.mean, self.std)
    }

    /// `(C_j, H_j, W_j)` for an `h x w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let pools = self.layer.pools_before();
        let c = self.stack.channels_at(self.layer).expect("validated at construction");
        (c, h >> pools, w >> pools)
    }

    fn normalize(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != 3 {
            return Err(Error::arg(format!(
                "feature extractor expects (n, 3, h, w), got {:?}",
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        let plane = h * w;
        let scale = self.std.map(|s| T::of(1.0 / s));
        let shift = self.mean.map(T::of);
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % 3;
            for v in chunk {
                *v = (*v - shift[c]) * scale[c];
            }
        }
        Ok(out)
    }

    pub fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.stack.forward(&self.normalize(x)?, self.layer)
    }

    pub fn extract_trace(&self, x: &Tensor<T>) -> Result<(Tensor<T>, FeatureTrace<T>)> {
        let (y, inner) = self.stack.forward_trace(&self.normalize(x)?, self.layer)?;
        Ok((y, FeatureTrace { inner }))
    }

    /// Gradient with respect to the `[0, 1]` input of a traced extraction.
    pub fn input_gradient(&self, trace: &FeatureTrace<T>, d_features: &Tensor<T>) -> Tensor<T> {
        let mut d = self.stack.backward(&trace.inner, d_features);
        let (_, _, h, w) = d.dims4();
        let scale = self.std.map(|s| T::of(1.0 / s));
        for (i, chunk) in d.data_mut().chunks_mut(h * w).enumerate() {
            let s = scale[i % 3];
            for v in chunk {
                *v = *v * s;
            }
        }
        d
    }
}
