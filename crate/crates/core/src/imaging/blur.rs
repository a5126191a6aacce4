//! Gaussian blur seen by the color discriminator.
//!
//! Kernel weights are `A * exp(-(k - mu_x)^2 / (2 s_x) - (l - mu_y)^2 / (2 s_y))`
//! with the variance term written as `2 sigma` (not `2 sigma^2`) by default.
//! With `A = 0.053` and `sigma = 3` this normalizes to within 0.2% of one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the `sigma` constant enters the exponent's denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConvention {
    /// `2 * sigma`
    #[default]
    Printed,
    /// `2 * sigma^2`, the textbook Gaussian.
    Squared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    radius: usize,
    amplitude: f64,
    mu: (f64, f64),
    sigma: (f64, f64),
    /// `(2r+1)^2` row-major weights; row offset `k`, column offset `l`.
    weights: Vec<f64>,
    /// Row and column factors whose outer product is `weights`.
    factors: Option<(Vec<f64>, Vec<f64>)>,
}

/// Isotropic, zero-mean kernel with the default sigma convention.
pub fn make_blur_kernel(radius: usize, amplitude: f64, sigma: f64) -> Result<BlurKernel> {
    BlurKernel::gaussian(radius, amplitude, (0.0, 0.0), (sigma, sigma), SigmaConvention::Printed)
}

impl BlurKernel {
    pub fn gaussian(
        radius: usize,
        amplitude: f64,
        mu: (f64, f64),
        sigma: (f64, f64),
        convention: SigmaConvention,
    ) -> Result<Self> {
        if radius < 1 {
            return Err(Error::arg("blur radius must be at least 1"));
        }
        if !(sigma.0 > 0.0 && sigma.1 > 0.0) {
            return Err(Error::arg(format!("blur sigma must be positive, got {sigma:?}")));
        }
        if !amplitude.is_finite() {
            return Err(Error::arg("blur amplitude must be finite"));
        }
        let denom = |s: f64| match convention {
            SigmaConvention::Printed => 2.0 * s,
            SigmaConvention::Squared => 2.0 * s * s,
        };
        let r = radius as isize;
        let rows: Vec<f64> = (-r..=r)
            .map(|k| amplitude * (-(k as f64 - mu.0).powi(2) / denom(sigma.0)).exp())
            .collect();
        let cols: Vec<f64> = (-r..=r)
            .map(|l| (-(l as f64 - mu.1).powi(2) / denom(sigma.1)).exp())
            .collect();
        let weights = (-r..=r)
            .flat_map(|k| {
                (-r..=r).map(move |l| {
                    amplitude
                        * (-(k as f64 - mu.0).powi(2) / denom(sigma.0) - (l as f64 - mu.1).powi(2) / denom(sigma.1))
                            .exp()
                })
            })
            .collect();
        Ok(BlurKernel {
            radius,
            amplitude,
            mu,
            sigma,
            weights,
            factors: Some((rows, cols)),
        })
    }

    /// Arbitrary `(2r+1)^2` weights, applied as a direct 2-D correlation.
    pub fn from_weights(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if radius < 1 || weights.len() != side * side {
            return Err(Error::arg(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        Ok(BlurKernel {
            radius,
            amplitude: weights[(side * side) / 2],
            mu: (0.0, 0.0),
            sigma: (f64::NAN, f64::NAN),
            weights,
            factors: None,
        })
    }

    /// The delta kernel: blurring with it is the identity.
    pub fn identity(radius: usize) -> Result<Self> {
        let side = 2 * radius + 1;
        let mut w = vec![0.0; side * side];
        w[side * side / 2] = 1.0;
        Self::from_weights(radius, w)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn mu(&self) -> (f64, f64) {
        self.mu
    }

    pub fn sigma(&self) -> (f64, f64) {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offsets `k` (rows) and `l` (columns), both in `[-r, r]`.
    pub fn weight(&self, k: isize, l: isize) -> f64 {
        let r = self.radius as isize;
        assert!(k.abs() <= r && l.abs() <= r, "offset outside kernel");
        self.weights[((k + r) * (2 * r + 1) + (l + r)) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Reflect index into `[0, n)` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

fn check<T: Scalar>(x: &Tensor<T>, kernel: &BlurKernel) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::arg(format!("blur expects an NCHW tensor, got {:?}", x.shape())));
    }
    let (n, c, h, w) = x.dims4();
    if kernel.side() > h || kernel.side() > w {
        return Err(Error::arg(format!(
            "blur kernel {}x{} larger than {h}x{w} image",
            kernel.side(),
            kernel.side()
        )));
    }
    Ok((n, c, h, w))
}

/// Per-channel 2-D cross-correlation with reflect padding; spatial size is preserved.
pub fn blur<T: Scalar>(x: &Tensor<T>, kernel: &BlurKernel) -> Result<Tensor<T>> {
    let (n, c, h, w) = check(x, kernel)?;
    let mut out = Tensor::zeros(x.shape());
    let planes = x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w));
    match &kernel.factors {
        Some((rows, cols)) => {
            let rows: Vec<T> = rows.iter().map(|&v| T::of(v)).collect();
            let cols: Vec<T> = cols.iter().map(|&v| T::of(v)).collect();
            let mut tmp = vec![T::zero(); h * w];
            let mut pad = vec![T::zero(); w + 2 * kernel.radius];
            for (src, dst) in planes {
                horizontal(src, &mut tmp, &cols, &mut pad, h, w, kernel.radius);
                vertical(&tmp, dst, &rows, h, w, kernel.radius);
            }
        }
        None => {
            let weights: Vec<T> = kernel.weights.iter().map(|&v| T::of(v)).collect();
            for (src, dst) in planes {
                direct(src, dst, &weights, h, w, kernel.radius);
            }
        }
    }
    debug_assert_eq!(out.len(), n * c * h * w);
    Ok(out)
}

/// Adjoint of [`blur`]: maps an output gradient to the input gradient.
pub fn blur_backward<T: Scalar>(dy: &Tensor<T>, kernel: &BlurKernel) -> Result<Tensor<T>> {
    let (_, _, h, w) = check(dy, kernel)?;
    let mut dx = Tensor::zeros(dy.shape());
    let planes = dy.data().chunks(h * w).zip(dx.data_mut().chunks_mut(h * w));
    match &kernel.factors {
        Some((rows, cols)) => {
            let rows: Vec<T> = rows.iter().map(|&v| T::of(v)).collect();
            let cols: Vec<T> = cols.iter().map(|&v| T::of(v)).collect();
            let mut tmp = vec![T::zero(); h * w];
            let mut pad = vec![T::zero(); w + 2 * kernel.radius];
            for (src, dst) in planes {
                tmp.fill(T::zero());
                vertical_adjoint(src, &mut tmp, &rows, h, w, kernel.radius);
                horizontal_adjoint(&tmp, dst, &cols, &mut pad, h, w, kernel.radius);
            }
        }
        None => {
            let weights: Vec<T> = kernel.weights.iter().map(|&v| T::of(v)).collect();
            for (src, dst) in planes {
                direct_adjoint(src, dst, &weights, h, w, kernel.radius);
            }
        }
    }
    Ok(dx)
}

fn horizontal<T: Scalar>(src: &[T], dst: &mut [T], cols: &[T], pad: &mut [T], h: usize, w: usize, r: usize) {
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (p, slot) in pad.iter_mut().enumerate() {
            *slot = row[reflect(p as isize - r as isize, w)];
        }
        for (x, out) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
            *out = pad[x..x + 2 * r + 1]
                .iter()
                .zip(cols)
                .fold(T::zero(), |acc, (&v, &g)| acc + v * g);
        }
    }
}

fn vertical<T: Scalar>(src: &[T], dst: &mut [T], rows: &[T], h: usize, w: usize, r: usize) {
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        out.fill(T::zero());
        for (t, &g) in rows.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - r as isize, h);
            for (o, &v) in out.iter_mut().zip(&src[sy * w..(sy + 1) * w]) {
                *o = *o + g * v;
            }
        }
    }
}

fn vertical_adjoint<T: Scalar>(dy: &[T], dtmp: &mut [T], rows: &[T], h: usize, w: usize, r: usize) {
    for y in 0..h {
        let g_out = &dy[y * w..(y + 1) * w];
        for (t, &g) in rows.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - r as isize, h);
            for (d, &v) in dtmp[sy * w..(sy + 1) * w].iter_mut().zip(g_out) {
                *d = *d + g * v;
            }
        }
    }
}

fn horizontal_adjoint<T: Scalar>(dtmp: &[T], dx: &mut [T], cols: &[T], pad: &mut [T], h: usize, w: usize, r: usize) {
    for y in 0..h {
        pad.fill(T::zero());
        for (x, &d) in dtmp[y * w..(y + 1) * w].iter().enumerate() {
            for (slot, &g) in pad[x..x + 2 * r + 1].iter_mut().zip(cols) {
                *slot = *slot + g * d;
            }
        }
        let row = &mut dx[y * w..(y + 1) * w];
        for (p, &v) in pad.iter().enumerate() {
            let sx = reflect(p as isize - r as isize, w);
            row[sx] = row[sx] + v;
        }
    }
}

fn direct<T: Scalar>(src: &[T], dst: &mut [T], weights: &[T], h: usize, w: usize, r: usize) {
    let side = 2 * r + 1;
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for k in 0..side {
                let sy = reflect(y as isize + k as isize - r as isize, h);
                for l in 0..side {
                    let sx = reflect(x as isize + l as isize - r as isize, w);
                    acc = acc + src[sy * w + sx] * weights[k * side + l];
                }
            }
            dst[y * w + x] = acc;
        }
    }
}

fn direct_adjoint<T: Scalar>(dy: &[T], dx: &mut [T], weights: &[T], h: usize, w: usize, r: usize) {
    let side = 2 * r + 1;
    for y in 0..h {
        for x in 0..w {
            let g = dy[y * w + x];
            for k in 0..side {
                let sy = reflect(y as isize + k as isize - r as isize, h);
                for l in 0..side {
                    let sx = reflect(x as isize + l as isize - r as isize, w);
                    dx[sy * w + sx] = dx[sy * w + sx] + g * weights[k * side + l];
                }
            }
        }
    }
}
