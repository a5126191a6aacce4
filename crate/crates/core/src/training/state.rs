use crate::error::{Error, Result};
use crate::imaging::{blur, to_grayscale, BlurKernel, SamplerState};
use crate::losses::{
    color_loss_grad, content_loss_grad, discriminator_loss, discriminator_loss_grad, logit_gradient, texture_loss_grad,
    tv_loss_grad, LossBreakdown, LossWeights, TvMode,
};
use crate::models::{build_bundle, Discriminator, FeatureExtractor, GeneratorTrace, ModelBundle};
use crate::nn::{prefixed, Adam, AdamConfig, Module};
use crate::tensor::{Scalar, Tensor};

use super::TrainConfig;

/// Per-step constants taken from the config.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSettings {
    pub kernel: BlurKernel,
    pub weights: LossWeights,
    pub tv_mode: TvMode,
}

impl StepSettings {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(StepSettings {
            kernel: cfg.blur_kernel()?,
            weights: cfg.loss_weights(),
            tv_mode: cfg.tv_mode,
        })
    }
}

/// Everything that evolves during training.
///
/// The generator and inverse generator share one optimizer; each
/// discriminator has its own.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar = f32> {
    pub bundle: ModelBundle<T>,
    pub generator_opt: Adam<T>,
    pub color_opt: Adam<T>,
    pub texture_opt: Adam<T>,
    pub step: u64,
    /// Sampler position after the last consumed batch.
    pub sampler: Option<SamplerState>,
    pub settings: StepSettings,
}

pub(crate) fn generator_params<T: Scalar>(b: &ModelBundle<T>) -> Vec<(String, &Tensor<T>)> {
    prefixed("generator", b.generator.params())
        .chain(prefixed("inverse", b.inverse.params()))
        .collect()
}

fn generator_params_mut<T: Scalar>(b: &mut ModelBundle<T>) -> Vec<(String, &mut Tensor<T>)> {
    prefixed("generator", b.generator.params_mut())
        .chain(prefixed("inverse", b.inverse.params_mut()))
        .collect()
}

impl<T: Scalar> TrainState<T> {
    pub fn new(bundle: ModelBundle<T>, adam: AdamConfig, settings: StepSettings) -> Self {
        let generator_opt = Adam::new(adam, &generator_params(&bundle));
        let color_opt = Adam::new(adam, &bundle.color_critic.params());
        let texture_opt = Adam::new(adam, &bundle.texture_critic.params());
        TrainState {
            bundle,
            generator_opt,
            color_opt,
            texture_opt,
            step: 0,
            sampler: None,
            settings,
        }
    }

    /// Fresh state for `cfg`, loading the feature weights it names.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let bundle = build_bundle(&cfg.arch())?;
        Ok(Self::new(bundle, cfg.adam(), StepSettings::from_config(cfg)?))
    }

    /// Fresh state around an already loaded extractor.
    pub fn with_features(cfg: &TrainConfig, features: FeatureExtractor<T>) -> Result<Self> {
        cfg.validate()?;
        let bundle = ModelBundle::with_features(&cfg.arch(), features)?;
        Ok(Self::new(bundle, cfg.adam(), StepSettings::from_config(cfg)?))
    }

    /// One iteration: color critic, texture critic, then generator and
    /// inverse generator. `x` and `y` are unpaired patch batches.
    pub fn train_step(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<LossBreakdown> {
        if x.shape() != y.shape() {
            return Err(Error::arg(format!(
                "source and target batches differ in shape: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let g_trace = self.bundle.generator.forward_trace(x)?;
        let (d_color, d_texture) = self.critic_update(g_trace.output(), y)?;
        let breakdown = self.generator_update(x, &g_trace, d_color, d_texture)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn diverged(&self, parts: [f64; 6]) -> Error {
        let [content, color, texture, tv, d_color, d_texture] = parts;
        let w = self.settings.weights;
        Error::Diverged {
            step: self.step + 1,
            breakdown: Box::new(LossBreakdown {
                content,
                color,
                texture,
                tv,
                total: w.content * content + w.adversarial * (color + texture) + w.tv * tv,
                d_color,
                d_texture,
            }),
        }
    }

    /// Updates both critics on real `y` against the detached `enhanced`
    /// batch; returns their losses. Generator parameters are not touched.
    pub fn critic_update(&mut self, enhanced: &Tensor<T>, y: &Tensor<T>) -> Result<(f64, f64)> {
        let nan = f64::NAN;
        let kernel = &self.settings.kernel;
        let d_color = critic_step(
            &mut self.bundle.color_critic,
            &mut self.color_opt,
            &blur(y, kernel)?,
            &blur(enhanced, kernel)?,
        )?;
        if !d_color.is_finite() {
            return Err(self.diverged([nan, nan, nan, nan, d_color, nan]));
        }
        let d_texture = critic_step(
            &mut self.bundle.texture_critic,
            &mut self.texture_opt,
            &to_grayscale(y)?,
            &to_grayscale(enhanced)?,
        )?;
        if !d_texture.is_finite() {
            return Err(self.diverged([nan, nan, nan, nan, d_color, d_texture]));
        }
        Ok((d_color, d_texture))
    }

    /// Updates the generator and inverse generator from a traced forward
    /// pass on `x`. The critics only supply input gradients.
    pub fn generator_update(
        &mut self,
        x: &Tensor<T>,
        g_trace: &GeneratorTrace<T>,
        d_color: f64,
        d_texture: f64,
    ) -> Result<LossBreakdown> {
        let weights = self.settings.weights;
        let kernel = &self.settings.kernel;
        let enhanced = g_trace.output();
        let b = &self.bundle;
        let f_trace = b.inverse.forward_trace(enhanced)?;
        let (content, d_rec) = content_loss_grad(x, f_trace.output(), b.features())?;
        let (color, d_col) = color_loss_grad(enhanced, &b.color_critic, kernel)?;
        let (texture, d_tex) = texture_loss_grad(enhanced, &b.texture_critic)?;
        let (tv, d_tv) = tv_loss_grad(enhanced, self.settings.tv_mode)?;
        let breakdown = match LossBreakdown::new(content, color, texture, tv, d_color, d_texture, &weights) {
            Ok(b) => b,
            Err(_) => return Err(self.diverged([content, color, texture, tv, d_color, d_texture])),
        };

        let mut g_grads = b.generator.zeros_like();
        let mut f_grads = b.inverse.zeros_like();
        let d_rec = d_rec.map(|v| v * T::of(weights.content));
        let mut d_enh = b
            .inverse
            .backward(&f_trace, &d_rec, Some(&mut f_grads), true)
            .expect("dx requested");
        d_enh.axpy(T::of(weights.adversarial), &d_col);
        d_enh.axpy(T::of(weights.adversarial), &d_tex);
        d_enh.axpy(T::of(weights.tv), &d_tv);
        b.generator.backward(g_trace, &d_enh, Some(&mut g_grads), false);

        let grads: Vec<(String, &Tensor<T>)> = prefixed("generator", g_grads.params())
            .chain(prefixed("inverse", f_grads.params()))
            .collect();
        self.generator_opt.update(generator_params_mut(&mut self.bundle), grads);
        Ok(breakdown)
    }
}

/// One discriminator update on detached real and fake inputs; returns its loss.
fn critic_step<T: Scalar>(
    critic: &mut Discriminator<T>,
    opt: &mut Adam<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<f64> {
    use crate::losses::Critic;
    let (p_real, (_, t_real)) = critic.probabilities_trace(real)?;
    let (p_fake, (_, t_fake)) = critic.probabilities_trace(fake)?;
    if p_real.iter().chain(&p_fake).any(|p| !p.is_finite()) {
        return Ok(f64::NAN);
    }
    let loss = discriminator_loss(&p_real, &p_fake)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let (dr, df) = discriminator_loss_grad(&p_real, &p_fake);
    let mut grads = critic.zeros_like();
    critic.backward(&t_real, &logit_gradient::<T>(&p_real, &dr), Some(&mut grads), false);
    critic.backward(&t_fake, &logit_gradient::<T>(&p_fake, &df), Some(&mut grads), false);
    opt.update(critic.params_mut(), grads.params());
    Ok(loss)
}
