use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, relu_backward, relu_inplace, unit_tanh_backward, unit_tanh_inplace, Conv2d, Init, Module};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub width: usize,
    pub residual_blocks: usize,
    pub entry_kernel: usize,
    pub block_kernel: usize,
    pub post_convs: usize,
    pub exit_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 64,
            residual_blocks: 4,
            entry_kernel: 9,
            block_kernel: 3,
            post_convs: 2,
            exit_kernel: 9,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.residual_blocks == 0 {
            return Err(Error::arg("generator needs at least one residual block"));
        }
        if self.width == 0 {
            return Err(Error::arg("generator width must be positive"));
        }
        for k in [self.entry_kernel, self.block_kernel, self.exit_kernel] {
            if k % 2 == 0 {
                return Err(Error::arg(format!("generator kernels must be odd, got {k}")));
            }
        }
        Ok(())
    }

    /// Distance over which an output pixel sees its input.
    pub fn receptive_radius(&self) -> usize {
        self.entry_kernel / 2
            + self.residual_blocks * 2 * (self.block_kernel / 2)
            + self.post_convs * (self.block_kernel / 2)
            + self.exit_kernel / 2
    }

    /// Smallest accepted input side: the largest kernel.
    pub fn min_input_size(&self) -> usize {
        self.entry_kernel.max(self.block_kernel).max(self.exit_kernel)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

/// Fully convolutional residual image-to-image network, `3 -> 3` channels,
/// output squashed into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    pub entry: Conv2d<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub post: Vec<Conv2d<T>>,
    pub exit: Conv2d<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct GeneratorTrace<T> {
    input: Tensor<T>,
    entry: Tensor<T>,
    /// `(h1, h2, out)` per residual block.
    blocks: Vec<(Tensor<T>, Tensor<T>, Tensor<T>)>,
    post: Vec<Tensor<T>>,
    output: Tensor<T>,
}

impl<T> GeneratorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let init = Init::FanIn;
        let entry = Conv2d::same(3, w, config.entry_kernel, 1, init, rng);
        let blocks = (0..config.residual_blocks)
            .map(|_| ResidualBlock {
                conv1: Conv2d::same(w, w, config.block_kernel, 1, init, rng),
                conv2: Conv2d::same(w, w, config.block_kernel, 1, init, rng),
            })
            .collect();
        let post = (0..config.post_convs)
            .map(|_| Conv2d::same(w, w, config.block_kernel, 1, init, rng))
            .collect();
        let exit = Conv2d::same(w, 3, config.exit_kernel, 1, init, rng);
        Ok(Generator {
            config: config.clone(),
            entry,
            blocks,
            post,
            exit,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 || x.shape()[1] != 3 {
            return Err(Error::arg(format!(
                "generator expects (n, 3, h, w), got {:?}",
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        let min = self.config.min_input_size();
        if h < min || w < min {
            return Err(Error::arg(format!(
                "generator input {h}x{w} is below the minimum size {min}x{min}"
            )));
        }
        Ok(())
    }

    /// Inference pass; intermediate activations are dropped as soon as possible.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.entry.forward(x);
        relu_inplace(&mut h);
        for b in &self.blocks {
            let mut t = b.conv1.forward(&h);
            relu_inplace(&mut t);
            let mut t = b.conv2.forward(&t);
            relu_inplace(&mut t);
            h.add_assign(&t);
        }
        for c in &self.post {
            h = c.forward(&h);
            relu_inplace(&mut h);
        }
        let mut y = self.exit.forward(&h);
        unit_tanh_inplace(&mut y);
        Ok(y)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<GeneratorTrace<T>> {
        self.check_input(x)?;
        let mut entry = self.entry.forward(x);
        relu_inplace(&mut entry);
        let mut blocks: Vec<(Tensor<T>, Tensor<T>, Tensor<T>)> = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let input = blocks.last().map(|t| &t.2).unwrap_or(&entry);
            let mut h1 = b.conv1.forward(input);
            relu_inplace(&mut h1);
            let mut h2 = b.conv2.forward(&h1);
            relu_inplace(&mut h2);
            let mut out = input.clone();
            out.add_assign(&h2);
            blocks.push((h1, h2, out));
        }
        let mut post: Vec<Tensor<T>> = Vec::with_capacity(self.post.len());
        for c in &self.post {
            let input = post
                .last()
                .unwrap_or_else(|| &blocks.last().expect("at least one block").2);
            let mut h = c.forward(input);
            relu_inplace(&mut h);
            post.push(h);
        }
        let last = post
            .last()
            .unwrap_or_else(|| &blocks.last().expect("at least one block").2);
        let mut output = self.exit.forward(last);
        unit_tanh_inplace(&mut output);
        Ok(GeneratorTrace {
            input: x.clone(),
            entry,
            blocks,
            post,
            output,
        })
    }

    /// Backpropagates `d_out` through the traced pass. Parameter gradients
    /// are added into `grads`; the input gradient is returned when `want_dx`.
    pub fn backward(
        &self,
        trace: &GeneratorTrace<T>,
        d_out: &Tensor<T>,
        mut grads: Option<&mut Generator<T>>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut d = d_out.clone();
        unit_tanh_backward(&mut d, &trace.output);
        let block_out = |i: usize| -> &Tensor<T> {
            if i == 0 {
                &trace.entry
            } else {
                &trace.blocks[i - 1].2
            }
        };
        let nb = self.blocks.len();
        let exit_in = trace.post.last().unwrap_or_else(|| block_out(nb));
        let mut d = self
            .exit
            .backward(exit_in, &d, grads.as_deref_mut().map(|g| &mut g.exit), true)
            .expect("dx requested");
        for (i, c) in self.post.iter().enumerate().rev() {
            relu_backward(&mut d, &trace.post[i]);
            let input = if i == 0 { block_out(nb) } else { &trace.post[i - 1] };
            d = c
                .backward(input, &d, grads.as_deref_mut().map(|g| &mut g.post[i]), true)
                .expect("dx requested");
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let (h1, h2, _) = &trace.blocks[i];
            let input = block_out(i);
            let mut dh = d.clone();
            relu_backward(&mut dh, h2);
            let mut dh = b
                .conv2
                .backward(h1, &dh, grads.as_deref_mut().map(|g| &mut g.blocks[i].conv2), true)
                .expect("dx requested");
            relu_backward(&mut dh, h1);
            let dx = b
                .conv1
                .backward(input, &dh, grads.as_deref_mut().map(|g| &mut g.blocks[i].conv1), true)
                .expect("dx requested");
            d.add_assign(&dx);
        }
        relu_backward(&mut d, &trace.entry);
        self.entry
            .backward(&trace.input, &d, grads.map(|g| &mut g.entry), want_dx)
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<_> = prefixed("entry", self.entry.params()).collect();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("blocks.{i}.conv1"), b.conv1.params()));
            out.extend(prefixed(&format!("blocks.{i}.conv2"), b.conv2.params()));
        }
        for (i, c) in self.post.iter().enumerate() {
            out.extend(prefixed(&format!("post.{i}"), c.params()));
        }
        out.extend(prefixed("exit", self.exit.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<_> = prefixed("entry", self.entry.params_mut()).collect();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("blocks.{i}.conv1"), b.conv1.params_mut()));
            out.extend(prefixed(&format!("blocks.{i}.conv2"), b.conv2.params_mut()));
        }
        for (i, c) in self.post.iter_mut().enumerate() {
            out.extend(prefixed(&format!("post.{i}"), c.params_mut()));
        }
        out.extend(prefixed("exit", self.exit.params_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            width: 4,
            residual_blocks: 1,
            entry_kernel: 3,
            block_kernel: 3,
            post_convs: 1,
            exit_kernel: 3,
        }
    }

    #[test]
    fn default_has_four_blocks_and_radius() {
        let c = GeneratorConfig::default();
        assert_eq!(c.residual_blocks, 4);
        assert_eq!(c.receptive_radius(), 4 + 8 + 2 + 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f32>::new(&c, &mut rng).unwrap();
        assert_eq!(g.blocks.len(), 4);
    }

    #[test]
    fn zero_blocks_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = GeneratorConfig {
            residual_blocks: 0,
            ..GeneratorConfig::default()
        };
        assert!(Generator::<f32>::new(&c, &mut rng).is_err());
    }

    #[test]
    fn shape_range_and_min_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f32>::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 3, 10, 13], |i| (i % 7) as f32 / 7.0);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let err = g.forward(&Tensor::zeros(&[1, 3, 2, 8])).unwrap_err();
        assert!(err.to_string().contains("3x3"));
    }

    #[test]
    fn traced_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::<f64>::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 3, 6, 6], |i| (i as f64 * 0.37).sin().abs());
        let t = g.forward_trace(&x).unwrap();
        assert!(t.output().bitwise_eq(&g.forward(&x).unwrap()));
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Generator::<f64>::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 3, 5, 5], |i| ((i * 17) % 13) as f64 / 13.0);
        let probe = Tensor::from_fn(&[1, 3, 5, 5], |i| ((i * 7) % 5) as f64 - 2.0);
        let loss = |g: &Generator<f64>| -> f64 {
            let y = g.forward(&x).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let trace = g.forward_trace(&x).unwrap();
        let mut grads = g.zeros_like();
        let dx = g.backward(&trace, &probe, Some(&mut grads), true).unwrap();
        let names: Vec<String> = g.params().iter().map(|(n, _)| n.clone()).collect();
        for (pi, name) in names.iter().enumerate() {
            let analytic = grads.params()[pi].1.data()[1];
            let h = 1e-6;
            let mut plus = g.clone();
            plus.params_mut()[pi].1.data_mut()[1] += h;
            let mut minus = g.clone();
            minus.params_mut()[pi].1.data_mut()[1] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "{name}: {analytic} vs {numeric}"
            );
        }
        // input gradient at one pixel
        let h = 1e-6;
        let shifted = |delta: f64| {
            let mut xx = x.clone();
            xx.data_mut()[12] += delta;
            let y = g.forward(&xx).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        assert!((dx.data()[12] - numeric).abs() < 1e-6);
    }
}
