use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over an ordered list of parameter tensors.
///
/// The list is fixed at construction; every update must present the same
/// names in the same order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[(String, &Tensor<T>)]) -> Self {
        Adam {
            config,
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Replaces the optimizer state, e.g. when resuming from a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }

    pub fn update(&mut self, params: Vec<(String, &mut Tensor<T>)>, grads: Vec<(String, &Tensor<T>)>) {
        assert_eq!(params.len(), self.names.len(), "adam: parameter count changed");
        assert_eq!(grads.len(), self.names.len(), "adam: gradient count mismatch");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::of(c.learning_rate);
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one_m_b1 = T::of(1.0 - c.beta1);
        let one_m_b2 = T::of(1.0 - c.beta2);
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let eps = T::of(c.eps);
        // a zero rate must leave parameters bitwise intact, signed zeros included
        let step_size = c.learning_rate != 0.0;

        for (i, ((pname, p), (gname, g))) in params.into_iter().zip(grads).enumerate() {
            debug_assert_eq!(pname, self.names[i]);
            debug_assert_eq!(gname, self.names[i]);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + one_m_b1 * gv;
                *vv = b2 * *vv + one_m_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                if step_size {
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * sign(g)
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, 1.0, 1.0]).unwrap();
        let g = Tensor::from_vec(&[3], vec![0.5, -2.0, 0.0]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &[("p".into(), &p)]);
        adam.update(vec![("p".into(), &mut p)], vec![("p".into(), &g)]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.data()[2], 1.0);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let mut p = Tensor::from_vec(&[3], vec![0.3f32, -0.0, 7.0]).unwrap();
        let before = p.clone();
        let g = Tensor::from_vec(&[3], vec![1.0, -1.0, 3.0]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &[("p".into(), &p)]);
        for _ in 0..3 {
            adam.update(vec![("p".into(), &mut p)], vec![("p".into(), &g)]);
        }
        assert!(p.bitwise_eq(&before));
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Tensor::from_vec(&[1], vec![5.0f64]).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &[("p".into(), &p)]);
        for _ in 0..500 {
            let g = p.map(|v| 2.0 * (v - 2.0));
            adam.update(vec![("p".into(), &mut p)], vec![("p".into(), &g)]);
        }
        assert!((p.data()[0] - 2.0).abs() < 1e-2);
    }
}
