//! Training objectives and their input gradients.
//!
//! Every value is accumulated in `f64`. Discriminator outputs are clamped to
//! `[PROB_EPS, 1 - PROB_EPS]` before any logarithm. The clamp guards the
//! reported value only: gradients are those of the unclamped objective, so a
//! saturated critic still sends a bounded signal (`-(1 - p)` per logit).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{blur, blur_backward, grayscale_backward, to_grayscale, BlurKernel};
use crate::models::{sigmoid, Discriminator, DiscriminatorTrace, FeatureExtractor};
use crate::tensor::{Scalar, Tensor};

pub const PROB_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub content: f64,
    pub adversarial: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            adversarial: 5e-3,
            tv: 10.0,
        }
    }
}

/// Scalars recorded for one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content: f64,
    pub color: f64,
    pub texture: f64,
    pub tv: f64,
    pub total: f64,
    pub d_color: f64,
    pub d_texture: f64,
}

impl LossBreakdown {
    /// Fills in `total` from the generator terms and checks every field.
    pub fn new(
        content: f64,
        color: f64,
        texture: f64,
        tv: f64,
        d_color: f64,
        d_texture: f64,
        weights: &LossWeights,
    ) -> Result<Self> {
        let total = total_loss(content, color, texture, tv, weights)?;
        let b = LossBreakdown {
            content,
            color,
            texture,
            tv,
            total,
            d_color,
            d_texture,
        };
        b.non_finite_term().map_or(Ok(b), |term| Err(Error::NonFinite { term }))
    }

    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("content", self.content),
            ("color", self.color),
            ("texture", self.texture),
            ("tv", self.tv),
            ("total", self.total),
            ("d_color", self.d_color),
            ("d_texture", self.d_texture),
        ]
    }

    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.fields().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields().iter().map(|(n, v)| format!("{n}={v:.6}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// `content + adversarial * (color + texture) + tv_weight * tv`.
pub fn total_loss(content: f64, color: f64, texture: f64, tv: f64, weights: &LossWeights) -> Result<f64> {
    for (term, v) in [("content", content), ("color", color), ("texture", texture), ("tv", tv)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term });
        }
    }
    Ok(weights.content * content + weights.adversarial * (color + texture) + weights.tv * tv)
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `1 / v`, kept finite when `v` underflows to zero. The chain rule through
/// the sigmoid multiplies by `p (1 - p)`, which is then zero as well.
fn recip(v: f64) -> f64 {
    1.0 / v.max(f64::MIN_POSITIVE)
}

/// A network mapping an image batch to one probability per element.
pub trait Critic<T: Scalar> {
    type Trace;

    fn in_channels(&self) -> usize;

    fn probabilities_trace(&self, x: &Tensor<T>) -> Result<(Vec<f64>, Self::Trace)>;

    /// Gradient with respect to the input, given `dL/dp` per element.
    fn input_gradient(&self, trace: &Self::Trace, d_probs: &[f64]) -> Tensor<T>;

    fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.probabilities_trace(x)?.0)
    }
}

impl<T: Scalar> Critic<T> for Discriminator<T> {
    type Trace = (Vec<f64>, DiscriminatorTrace<T>);

    fn in_channels(&self) -> usize {
        Discriminator::in_channels(self)
    }

    fn probabilities_trace(&self, x: &Tensor<T>) -> Result<(Vec<f64>, Self::Trace)> {
        let (logits, trace) = self.forward_trace(x)?;
        let p: Vec<f64> = logits.iter().map(|z| sigmoid(z.as_f64())).collect();
        Ok((p.clone(), (p, trace)))
    }

    fn input_gradient(&self, trace: &Self::Trace, d_probs: &[f64]) -> Tensor<T> {
        let d_logits = logit_gradient(&trace.0, d_probs);
        self.backward(&trace.1, &d_logits, None, true).expect("dx requested")
    }
}

/// Chain rule through the sigmoid: `dL/dz = dL/dp * p * (1 - p)`.
pub fn logit_gradient<T: Scalar>(probs: &[f64], d_probs: &[f64]) -> Vec<T> {
    probs
        .iter()
        .zip(d_probs)
        .map(|(&p, &d)| {
            let s = p * (1.0 - p);
            T::of(if s == 0.0 { 0.0 } else { d * s })
        })
        .collect()
}

/// Critic with a fixed output, for tests and ablations.
#[derive(Clone, Copy, Debug)]
pub struct ConstantCritic {
    pub probability: f64,
    pub channels: usize,
}

impl<T: Scalar> Critic<T> for ConstantCritic {
    type Trace = Vec<usize>;

    fn in_channels(&self) -> usize {
        self.channels
    }

    fn probabilities_trace(&self, x: &Tensor<T>) -> Result<(Vec<f64>, Vec<usize>)> {
        check_channels(x, self.channels)?;
        Ok((vec![self.probability; x.shape()[0]], x.shape().to_vec()))
    }

    fn input_gradient(&self, shape: &Vec<usize>, _: &[f64]) -> Tensor<T> {
        Tensor::zeros(shape)
    }
}

fn check_channels<T: Scalar>(x: &Tensor<T>, c: usize) -> Result<()> {
    if x.rank() != 4 || x.shape()[1] != c {
        return Err(Error::arg(format!(
            "critic expects {c} channels, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// `-sum log p` with clamping, and `dL/dp`.
fn fool_loss(probs: &[f64]) -> (f64, Vec<f64>) {
    let value = probs.iter().map(|&p| -clamp_prob(p).ln()).sum();
    let grad = probs.iter().map(|&p| -recip(p)).collect();
    (value, grad)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared difference of the extractor's features for `x` and `x_rec`.
pub fn content_loss<T: Scalar>(x: &Tensor<T>, x_rec: &Tensor<T>, f: &FeatureExtractor<T>) -> Result<f64> {
    same_shape(x, x_rec, "content loss")?;
    let a = f.extract(x)?;
    let b = f.extract(x_rec)?;
    Ok(mean_sq_diff(&a, &b))
}

fn mean_sq_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum();
    s / a.len() as f64
}

/// Content loss and its gradient with respect to `x_rec`.
pub fn content_loss_grad<T: Scalar>(
    x: &Tensor<T>,
    x_rec: &Tensor<T>,
    f: &FeatureExtractor<T>,
) -> Result<(f64, Tensor<T>)> {
    same_shape(x, x_rec, "content loss")?;
    let target = f.extract(x)?;
    let (feat, trace) = f.extract_trace(x_rec)?;
    let value = mean_sq_diff(&feat, &target);
    let scale = 2.0 / feat.len() as f64;
    let d = feat.zip_map(&target, |p, q| T::of(scale * (p.as_f64() - q.as_f64())));
    Ok((value, f.input_gradient(&trace, &d)))
}

/// `-sum_i log D_c(blur(enhanced)_i)`.
pub fn color_loss<T: Scalar, C: Critic<T>>(enhanced: &Tensor<T>, critic: &C, kernel: &BlurKernel) -> Result<f64> {
    let p = critic.probabilities(&blur(enhanced, kernel)?)?;
    Ok(fool_loss(&p).0)
}

pub fn color_loss_grad<T: Scalar, C: Critic<T>>(
    enhanced: &Tensor<T>,
    critic: &C,
    kernel: &BlurKernel,
) -> Result<(f64, Tensor<T>)> {
    let (p, trace) = critic.probabilities_trace(&blur(enhanced, kernel)?)?;
    let (value, dp) = fool_loss(&p);
    let d_blurred = critic.input_gradient(&trace, &dp);
    Ok((value, blur_backward(&d_blurred, kernel)?))
}

/// `-sum_i log D_t(gray(enhanced)_i)`.
pub fn texture_loss<T: Scalar, C: Critic<T>>(enhanced: &Tensor<T>, critic: &C) -> Result<f64> {
    let p = critic.probabilities(&to_grayscale(enhanced)?)?;
    Ok(fool_loss(&p).0)
}

pub fn texture_loss_grad<T: Scalar, C: Critic<T>>(enhanced: &Tensor<T>, critic: &C) -> Result<(f64, Tensor<T>)> {
    let (p, trace) = critic.probabilities_trace(&to_grayscale(enhanced)?)?;
    let (value, dp) = fool_loss(&p);
    let d_gray = critic.input_gradient(&trace, &dp);
    Ok((value, grayscale_backward(&d_gray)))
}

/// `-sum log p_real - sum log(1 - p_fake)`.
pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    for &p in real.iter().chain(fake) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::arg(format!("probability {p} outside [0, 1]")));
        }
    }
    let r: f64 = real.iter().map(|&p| -clamp_prob(p).ln()).sum();
    let f: f64 = fake.iter().map(|&p| -(1.0 - clamp_prob(p)).ln()).sum();
    Ok(r + f)
}

/// `dL/dp` for the real and fake probabilities of [`discriminator_loss`].
pub fn discriminator_loss_grad(real: &[f64], fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dr = real.iter().map(|&p| -recip(p)).collect();
    let df = fake.iter().map(|&p| recip(1.0 - p)).collect();
    (dr, df)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMode {
    /// `(||dx|| + ||dy||) / (C H W)` over whole difference fields.
    #[default]
    Anisotropic,
    /// `sum sqrt(dx^2 + dy^2) / (C H W)` over pixels with both neighbours.
    Isotropic,
}

/// Total variation, evaluated per image and averaged over the batch.
pub fn tv_loss<T: Scalar>(img: &Tensor<T>, mode: TvMode) -> Result<f64> {
    Ok(tv_impl(img, mode, false)?.0)
}

pub fn tv_loss_grad<T: Scalar>(img: &Tensor<T>, mode: TvMode) -> Result<(f64, Tensor<T>)> {
    let (v, g) = tv_impl(img, mode, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn tv_impl<T: Scalar>(img: &Tensor<T>, mode: TvMode, want_grad: bool) -> Result<(f64, Option<Tensor<T>>)> {
    if img.rank() != 4 {
        return Err(Error::arg(format!(
            "total variation expects NCHW, got {:?}",
            img.shape()
        )));
    }
    let (n, c, h, w) = img.dims4();
    if h < 2 && w < 2 {
        return Err(Error::arg(format!(
            "total variation needs at least two pixels, got {h}x{w}"
        )));
    }
    if mode == TvMode::Isotropic && (h < 2 || w < 2) {
        return Err(Error::arg(format!(
            "isotropic total variation needs at least 2x2 images, got {h}x{w}"
        )));
    }
    let per = c * h * w;
    let x = img.data();
    let at = |b: usize, ch: usize, i: usize, j: usize| x[b * per + ch * h * w + i * w + j].as_f64();
    let mut grad = want_grad.then(|| vec![0f64; x.len()]);
    let mut total = 0.0;
    let norm = per as f64;
    for b in 0..n {
        match mode {
            TvMode::Anisotropic => {
                let mut sh = 0.0;
                let mut sv = 0.0;
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            if j + 1 < w {
                                let d = at(b, ch, i, j + 1) - at(b, ch, i, j);
                                sh += d * d;
                            }
                            if i + 1 < h {
                                let d = at(b, ch, i + 1, j) - at(b, ch, i, j);
                                sv += d * d;
                            }
                        }
                    }
                }
                let (nh, nv) = (sh.sqrt(), sv.sqrt());
                total += (nh + nv) / norm;
                if let Some(g) = grad.as_mut() {
                    let scale = 1.0 / (norm * n as f64);
                    let ch_ = if nh > 0.0 { scale / nh } else { 0.0 };
                    let cv_ = if nv > 0.0 { scale / nv } else { 0.0 };
                    for ch in 0..c {
                        let base = b * per + ch * h * w;
                        for i in 0..h {
                            for j in 0..w {
                                if j + 1 < w {
                                    let d = at(b, ch, i, j + 1) - at(b, ch, i, j);
                                    g[base + i * w + j + 1] += ch_ * d;
                                    g[base + i * w + j] -= ch_ * d;
                                }
                                if i + 1 < h {
                                    let d = at(b, ch, i + 1, j) - at(b, ch, i, j);
                                    g[base + (i + 1) * w + j] += cv_ * d;
                                    g[base + i * w + j] -= cv_ * d;
                                }
                            }
                        }
                    }
                }
            }
            TvMode::Isotropic => {
                let mut s = 0.0;
                for ch in 0..c {
                    let base = b * per + ch * h * w;
                    for i in 0..h - 1 {
                        for j in 0..w - 1 {
                            let dh = at(b, ch, i, j + 1) - at(b, ch, i, j);
                            let dv = at(b, ch, i + 1, j) - at(b, ch, i, j);
                            let m = (dh * dh + dv * dv).sqrt();
                            s += m;
                            if let Some(g) = grad.as_mut() {
                                if m > 0.0 {
                                    let k = 1.0 / (m * norm * n as f64);
                                    g[base + i * w + j + 1] += k * dh;
                                    g[base + (i + 1) * w + j] += k * dv;
                                    g[base + i * w + j] -= k * (dh + dv);
                                }
                            }
                        }
                    }
                }
                total += s / norm;
            }
        }
    }
    let grad = grad.map(|g| Tensor::from_vec(img.shape(), g.into_iter().map(T::of).collect()).expect("same length"));
    Ok((total / n as f64, grad))
}
