//! Layer primitives with hand-written backward passes.
//!
//! Every layer exposes `forward` plus a `backward` that takes the cached
//! forward input and the upstream gradient, accumulates parameter gradients
//! into a same-shaped "gradient twin" of the layer, and returns the gradient
//! with respect to its input. Networks are composed from these explicitly,
//! so which parameters a loss can reach is visible in the call graph.

mod act;
mod adam;
mod conv;
mod linear;
mod pool;

pub use act::{
    leaky_relu_backward, leaky_relu_inplace, relu_backward, relu_inplace, unit_tanh_backward, unit_tanh_inplace,
};
pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::{max_pool2x2, max_pool2x2_backward, PoolIndices};

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Parameter initialization schemes. Both draw from a uniform distribution
/// whose bound scales with the fan-in of the layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    FanIn,
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, keeps ReLU stacks from fading out.
    He,
}

impl Init {
    pub fn bound(self, fan_in: usize) -> f64 {
        let fan_in = fan_in.max(1) as f64;
        match self {
            Init::FanIn => 1.0 / fan_in.sqrt(),
            Init::He => (6.0 / fan_in).sqrt(),
        }
    }
}

/// Values are drawn as `f64` so a seed yields the same parameters (up to
/// rounding) whatever the scalar type.
pub(crate) fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// Anything owning named trainable tensors.
pub trait Module<T: Scalar>: Clone {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    /// A copy with every parameter set to zero, used as a gradient accumulator.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, p) in out.params_mut() {
            p.fill(T::zero());
        }
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn params_bitwise_eq(&self, other: &Self) -> bool {
        let a = self.params();
        let b = other.params();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }

    fn params_all_zero(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, p)| p.data().iter().all(|v| *v == T::zero()))
    }
}

pub(crate) fn prefixed<'a, P>(prefix: &str, items: Vec<(String, P)>) -> impl Iterator<Item = (String, P)> + 'a
where
    P: 'a,
{
    let prefix = prefix.to_string();
    items.into_iter().map(move |(name, p)| (format!("{prefix}.{name}"), p))
}
