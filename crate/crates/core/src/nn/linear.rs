use rand::Rng;

use super::{uniform, Init, Module};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Fully connected layer over the flattened trailing dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(out_features, in_features)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, init: Init, rng: &mut R) -> Self {
        Linear {
            weight: uniform(&[out_features, in_features], init.bound(in_features), rng),
            bias: uniform(&[out_features], Init::FanIn.bound(in_features), rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn rows(&self, x: &Tensor<T>) -> usize {
        let n = x.shape()[0];
        assert_eq!(
            x.len(),
            n * self.in_features(),
            "linear expects {} features per row",
            self.in_features()
        );
        n
    }

    /// `x` may have any shape whose leading axis is the batch; output is `(n, out)`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = self.rows(x);
        let (fin, fout) = (self.in_features(), self.out_features());
        let mut y = Tensor::zeros(&[n, fout]);
        for row in y.data_mut().chunks_mut(fout) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            T::one(),
            MatRef::row_major(x.data(), n, fin),
            MatRef::row_major(self.weight.data(), fout, fin).t(),
            T::one(),
            y.data_mut(),
            fout,
        );
        y
    }

    /// Returns the input gradient shaped like `x`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<&mut Linear<T>>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let n = self.rows(x);
        let (fin, fout) = (self.in_features(), self.out_features());
        assert_eq!(dy.shape(), &[n, fout], "linear backward: dy shape");
        if let Some(g) = grads {
            gemm(
                T::one(),
                MatRef::row_major(dy.data(), n, fout).t(),
                MatRef::row_major(x.data(), n, fin),
                T::one(),
                g.weight.data_mut(),
                fin,
            );
            for row in dy.data().chunks(fout) {
                for (b, &d) in g.bias.data_mut().iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
        }
        want_dx.then(|| {
            let mut dx = Tensor::zeros(x.shape());
            gemm(
                T::one(),
                MatRef::row_major(dy.data(), n, fout),
                MatRef::row_major(self.weight.data(), fout, fin),
                T::zero(),
                dx.data_mut(),
                fin,
            );
            dx
        })
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_and_backward_match_hand_values() {
        let lin = Linear {
            weight: Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap(),
        };
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 2.0]).unwrap();
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[9.5, 0.5]);
        let dy = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let mut g = lin.zeros_like();
        let dx = lin.backward(&x, &dy, Some(&mut g), true).unwrap();
        assert_eq!(dx.data(), &[-1.0, 2.0, 5.0]);
        assert_eq!(g.weight.data(), &[1.0, 1.0, 2.0, 2.0, 2.0, 4.0]);
        assert_eq!(g.bias.data(), &[1.0, 2.0]);
    }

    #[test]
    fn accepts_nchw_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::<f32>::new(12, 5, Init::FanIn, &mut rng);
        let x = Tensor::<f32>::zeros(&[4, 3, 2, 2]);
        assert_eq!(lin.forward(&x).shape(), &[4, 5]);
    }
}
