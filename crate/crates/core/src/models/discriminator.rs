use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu_backward, leaky_relu_inplace, prefixed, Conv2d, Init, Linear, Module};
use crate::tensor::{Scalar, Tensor};

/// Layout of one discriminator. Convolutions use "same" padding (`k / 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    /// Side of the square patches the network is built for.
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub hidden: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorConfig {
    pub fn standard(in_channels: usize, input_size: usize) -> Self {
        DiscriminatorConfig {
            in_channels,
            input_size,
            channels: vec![48, 128, 192, 192, 128],
            kernels: vec![11, 5, 3, 3, 3],
            strides: vec![4, 2, 1, 1, 2],
            hidden: 1024,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::arg(format!(
                "discriminator needs matching channel/kernel/stride lists, got {}/{}/{}",
                n,
                self.kernels.len(),
                self.strides.len()
            )));
        }
        if self.in_channels == 0 || self.hidden == 0 || self.input_size == 0 {
            return Err(Error::arg("discriminator sizes must be positive"));
        }
        if self.strides.contains(&0) || self.kernels.contains(&0) || self.channels.contains(&0) {
            return Err(Error::arg("discriminator layers need positive sizes and strides"));
        }
        if self.feature_hw().is_none() {
            return Err(Error::arg(format!(
                "{}px input is too small for the discriminator layers",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Spatial size after the convolution stack.
    pub fn feature_hw(&self) -> Option<usize> {
        let mut s = self.input_size;
        for (&k, &st) in self.kernels.iter().zip(&self.strides) {
            let padded = s + 2 * (k / 2);
            if padded < k {
                return None;
            }
            s = (padded - k) / st + 1;
        }
        Some(s)
    }
}

/// Convolution stack, one hidden fully connected layer and a scalar logit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    pub convs: Vec<Conv2d<T>>,
    pub hidden: Linear<T>,
    pub head: Linear<T>,
}

pub struct DiscriminatorTrace<T> {
    /// Input followed by every convolution's activated output.
    acts: Vec<Tensor<T>>,
    hidden: Tensor<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let mut convs = Vec::with_capacity(config.channels.len());
        for i in 0..config.channels.len() {
            convs.push(Conv2d::same(
                cin,
                config.channels[i],
                config.kernels[i],
                config.strides[i],
                Init::FanIn,
                rng,
            ));
            cin = config.channels[i];
        }
        let side = config.feature_hw().expect("validated");
        let hidden = Linear::new(cin * side * side, config.hidden, Init::FanIn, rng);
        let head = Linear::new(config.hidden, 1, Init::FanIn, rng);
        Ok(Discriminator {
            config: config.clone(),
            convs,
            hidden,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 {
            return Err(Error::arg(format!(
                "discriminator expects NCHW input, got {:?}",
                x.shape()
            )));
        }
        let (_, c, h, w) = x.dims4();
        if c != self.config.in_channels {
            return Err(Error::arg(format!(
                "discriminator expects {} channels, got {c}",
                self.config.in_channels
            )));
        }
        let s = self.config.input_size;
        if h != s || w != s {
            return Err(Error::arg(format!(
                "discriminator is built for {s}x{s} patches, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn slope(&self) -> T {
        T::of(self.config.leaky_slope)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<(Vec<T>, DiscriminatorTrace<T>)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.convs.len() + 1);
        acts.push(x.clone());
        for c in &self.convs {
            let mut h = c.forward(acts.last().expect("non-empty"));
            leaky_relu_inplace(&mut h, self.slope());
            acts.push(h);
        }
        let mut hidden = self.hidden.forward(acts.last().expect("non-empty"));
        leaky_relu_inplace(&mut hidden, self.slope());
        let logits = self.head.forward(&hidden).into_data();
        Ok((logits, DiscriminatorTrace { acts, hidden }))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_trace(x)?.0)
    }

    /// Sigmoid of the logits, evaluated in double precision.
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(|z| sigmoid(z.as_f64())).collect())
    }

    /// Backpropagates per-element logit gradients.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<T>,
        d_logits: &[T],
        mut grads: Option<&mut Discriminator<T>>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let n = d_logits.len();
        let dz = Tensor::from_vec(&[n, 1], d_logits.to_vec()).expect("one logit per row");
        let mut dh = self
            .head
            .backward(&trace.hidden, &dz, grads.as_deref_mut().map(|g| &mut g.head), true)
            .expect("dx requested");
        leaky_relu_backward(&mut dh, &trace.hidden, self.slope());
        let last = trace.acts.last().expect("non-empty");
        let mut d = self
            .hidden
            .backward(last, &dh, grads.as_deref_mut().map(|g| &mut g.hidden), true)
            .expect("dx requested");
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&mut d, &trace.acts[i + 1], self.slope());
            let need = want_dx || i > 0;
            match self.convs[i].backward(&trace.acts[i], &d, grads.as_deref_mut().map(|g| &mut g.convs[i]), need) {
                Some(next) => d = next,
                None => return None,
            }
        }
        Some(d)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(prefixed(&format!("convs.{i}"), c.params()));
        }
        out.extend(prefixed("hidden", self.hidden.params()));
        out.extend(prefixed("head", self.head.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.extend(prefixed(&format!("convs.{i}"), c.params_mut()));
        }
        out.extend(prefixed("hidden", self.hidden.params_mut()));
        out.extend(prefixed("head", self.head.params_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_layout_strides_and_hidden_width() {
        let cfg = DiscriminatorConfig::standard(3, 100);
        assert_eq!(cfg.strides[0], 4);
        assert_eq!(cfg.strides[1], 2);
        assert_eq!(cfg.strides[4], 2);
        assert_eq!(cfg.feature_hw(), Some(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f32>::new(&cfg, &mut rng).unwrap();
        assert_eq!(d.hidden.out_features(), 1024);
        assert_eq!(d.hidden.in_features(), 128 * 7 * 7);
        assert_eq!(d.head.in_features(), 1024);
    }

    #[test]
    fn probabilities_per_element_and_in_open_interval() {
        let cfg = DiscriminatorConfig {
            channels: vec![4, 6],
            kernels: vec![5, 3],
            strides: vec![4, 2],
            hidden: 16,
            ..DiscriminatorConfig::standard(3, 32)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::<f32>::new(&cfg, &mut rng).unwrap();
        let one = Tensor::from_fn(&[1, 3, 32, 32], |i| (i % 11) as f32 / 11.0);
        let batch = Tensor::concat_batch(&[one.clone(), one.clone(), one]).unwrap();
        let p = d.probabilities(&batch).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
        assert!(d.probabilities(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
        assert!(d.probabilities(&Tensor::zeros(&[1, 3, 30, 32])).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let cfg = DiscriminatorConfig {
            channels: vec![3, 4],
            kernels: vec![3, 3],
            strides: vec![2, 1],
            hidden: 8,
            ..DiscriminatorConfig::standard(1, 8)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 1, 8, 8], |i| ((i * 29) % 17) as f64 / 17.0);
        let (_, trace) = d.forward_trace(&x).unwrap();
        let dx = d.backward(&trace, &[1.0, -0.5], None, true).unwrap();
        let f = |xx: &Tensor<f64>| {
            let z = d.logits(xx).unwrap();
            z[0] - 0.5 * z[1]
        };
        for idx in [0, 9, 70, 127] {
            let mut p = x.clone();
            p.data_mut()[idx] += 1e-6;
            let mut m = x.clone();
            m.data_mut()[idx] -= 1e-6;
            let numeric = (f(&p) - f(&m)) / 2e-6;
            assert!((dx.data()[idx] - numeric).abs() < 1e-7, "idx {idx}");
        }
    }
}
