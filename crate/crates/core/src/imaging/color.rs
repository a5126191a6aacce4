use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// ITU-R BT.601 luma coefficients for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// `(n, 3, h, w) -> (n, 1, h, w)` luma; the weighted sum is formed in `f64`.
pub fn to_grayscale<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 || x.shape()[1] != 3 {
        return Err(Error::arg(format!(
            "grayscale conversion needs 3 channels, got shape {:?}",
            x.shape()
        )));
    }
    let (n, _, h, w) = x.dims4();
    let plane = h * w;
    let src = x.data();
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for (b, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let base = b * 3 * plane;
        for (i, d) in dst.iter_mut().enumerate() {
            let v = LUMA_WEIGHTS[0] * src[base + i].as_f64()
                + LUMA_WEIGHTS[1] * src[base + plane + i].as_f64()
                + LUMA_WEIGHTS[2] * src[base + 2 * plane + i].as_f64();
            *d = T::of(v);
        }
    }
    Ok(out)
}

/// Adjoint of [`to_grayscale`].
pub fn grayscale_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dy.dims4();
    assert_eq!(c, 1, "grayscale gradient has one channel");
    let plane = h * w;
    let weights = LUMA_WEIGHTS.map(T::of);
    let mut dx = Tensor::zeros(&[n, 3, h, w]);
    for b in 0..n {
        let g = &dy.data()[b * plane..(b + 1) * plane];
        for (ch, &wt) in weights.iter().enumerate() {
            let start = (b * 3 + ch) * plane;
            for (d, &v) in dx.data_mut()[start..start + plane].iter_mut().zip(g) {
                *d = wt * v;
            }
        }
    }
    dx
}

/// `(n, 1, h, w) -> (n, 3, h, w)` by copying the single channel.
pub fn replicate_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    if c != 1 {
        return Err(Error::arg(format!("replication needs 1 channel, got {c}")));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * 3 * plane);
    for b in 0..n {
        let src = &x.data()[b * plane..(b + 1) * plane];
        for _ in 0..3 {
            data.extend_from_slice(src);
        }
    }
    Tensor::from_vec(&[n, 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(r: f32, g: f32, b: f32) -> Tensor<f32> {
        Tensor::from_vec(&[1, 3, 1, 1], vec![r, g, b]).unwrap()
    }

    #[test]
    fn luma_of_primaries() {
        let white = to_grayscale(&pixel(1.0, 1.0, 1.0)).unwrap();
        assert!((white.data()[0] - 1.0).abs() < 1e-6);
        assert_eq!(to_grayscale(&pixel(0.0, 0.0, 0.0)).unwrap().data()[0], 0.0);
        let green = to_grayscale(&pixel(0.0, 1.0, 0.0)).unwrap();
        assert!((green.data()[0] - 0.587).abs() < 1e-7);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(to_grayscale(&Tensor::<f32>::zeros(&[1, 1, 2, 2])).is_err());
    }

    #[test]
    fn idempotent_through_replication() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |i| ((i * 7) % 23) as f64 / 23.0);
        let g = to_grayscale(&x).unwrap();
        let gg = to_grayscale(&replicate_channels(&g).unwrap()).unwrap();
        assert!(g.max_abs_diff(&gg) < 1e-6);
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |i| (i as f64).sin());
        let dy = Tensor::<f64>::from_fn(&[2, 1, 3, 3], |i| (i as f64).cos());
        let y = to_grayscale(&x).unwrap();
        let dx = grayscale_backward(&dy);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
