use rand::Rng;

use super::{uniform, Init, Module};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Upper bound on the im2col scratch buffer, in elements.
const COLS_BUDGET: usize = 1 << 22;

/// 2-D convolution (cross-correlation) with square kernels and zero padding.
///
/// Lowered to im2col + gemm, processed in bands of output rows so the
/// scratch matrix stays bounded for arbitrarily large images.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `(out_channels, in_channels, k, k)`
    pub weight: Tensor<T>,
    /// `(out_channels,)`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Output columns whose input column for kernel offset `kj` is in bounds.
    fn ow_range(&self, kj: usize) -> (usize, usize) {
        let lo = if self.p > kj { (self.p - kj).div_ceil(self.s) } else { 0 };
        let last = self.w - 1 + self.p;
        let hi = if last >= kj {
            ((last - kj) / self.s + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn rows_per_band(&self) -> usize {
        (COLS_BUDGET / (self.patch_len() * self.wo).max(1)).clamp(1, self.ho)
    }

    fn im2col<T: Scalar>(&self, img: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let l = (r1 - r0) * self.wo;
        for ci in 0..self.cin {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst_row = &mut cols[row * l..(row + 1) * l];
                    let (lo, hi) = self.ow_range(kj);
                    for (t, oh) in (r0..r1).enumerate() {
                        let dst = &mut dst_row[t * self.wo..(t + 1) * self.wo];
                        let ih = (oh * self.s + ki) as isize - self.p as isize;
                        if ih < 0 || ih >= self.h as isize || lo == hi {
                            dst.fill(T::zero());
                            continue;
                        }
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        let iw0 = lo * self.s + kj - self.p;
                        if self.s == 1 {
                            dst[lo..hi].copy_from_slice(&src[iw0..iw0 + hi - lo]);
                        } else {
                            for (o, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[iw0 + o * self.s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], r0: usize, r1: usize, img: &mut [T]) {
        let l = (r1 - r0) * self.wo;
        for ci in 0..self.cin {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src_row = &cols[row * l..(row + 1) * l];
                    let (lo, hi) = self.ow_range(kj);
                    if lo == hi {
                        continue;
                    }
                    for (t, oh) in (r0..r1).enumerate() {
                        let ih = (oh * self.s + ki) as isize - self.p as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let src = &src_row[t * self.wo..(t + 1) * self.wo];
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        let iw0 = lo * self.s + kj - self.p;
                        for (o, &v) in src[lo..hi].iter().enumerate() {
                            let d = &mut dst[iw0 + o * self.s];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bound = init.bound(in_channels * kernel * kernel);
        let weight = uniform(&[out_channels, in_channels, kernel, kernel], bound, rng);
        // biases start small and symmetric regardless of the weight scheme
        let bias = uniform(&[out_channels], Init::FanIn.bound(in_channels * kernel * kernel), rng);
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// "Same" padding (`kernel / 2`) for the given stride.
    pub fn same<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        Self::new(in_channels, out_channels, kernel, stride, kernel / 2, init, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Output height and width, or `None` when the padded input is smaller than the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < k || wp < k {
            return None;
        }
        Some(((hp - k) / self.stride + 1, (wp - k) / self.stride + 1))
    }

    fn geometry(&self, x: &Tensor<T>) -> Geometry {
        let (_, c, h, w) = x.dims4();
        assert_eq!(
            c,
            self.in_channels(),
            "conv expects {} input channels, got {c}",
            self.in_channels()
        );
        let (ho, wo) = self
            .output_hw(h, w)
            .unwrap_or_else(|| panic!("conv input {h}x{w} smaller than kernel"));
        Geometry {
            cin: c,
            h,
            w,
            k: self.kernel(),
            s: self.stride,
            p: self.padding,
            ho,
            wo,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry(x);
        let n = x.dims4().0;
        let cout = self.out_channels();
        let plane = g.ho * g.wo;
        let kk = g.patch_len();
        let band = g.rows_per_band();
        let mut y = Tensor::zeros(&[n, cout, g.ho, g.wo]);
        let mut cols = vec![T::zero(); kk * band * g.wo];
        let w = MatRef::row_major(self.weight.data(), cout, kk);
        let in_len = g.cin * g.h * g.w;
        for b in 0..n {
            let xb = &x.data()[b * in_len..(b + 1) * in_len];
            let yb = &mut y.data_mut()[b * cout * plane..(b + 1) * cout * plane];
            for (co, chunk) in yb.chunks_mut(plane).enumerate() {
                chunk.fill(self.bias.data()[co]);
            }
            let mut r0 = 0;
            while r0 < g.ho {
                let r1 = (r0 + band).min(g.ho);
                let l = (r1 - r0) * g.wo;
                let cols = &mut cols[..kk * l];
                g.im2col(xb, r0, r1, cols);
                gemm(
                    T::one(),
                    w,
                    MatRef::row_major(cols, kk, l),
                    T::one(),
                    &mut yb[r0 * g.wo..],
                    plane,
                );
                r0 = r1;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the input gradient (when `want_dx`).
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grads: Option<&mut Conv2d<T>>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let g = self.geometry(x);
        let n = x.dims4().0;
        let cout = self.out_channels();
        assert_eq!(dy.shape(), &[n, cout, g.ho, g.wo], "conv backward: dy shape");
        let plane = g.ho * g.wo;
        let kk = g.patch_len();
        let band = g.rows_per_band();
        let in_len = g.cin * g.h * g.w;
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = vec![T::zero(); kk * band * g.wo];
        let mut dcols = if want_dx {
            vec![T::zero(); kk * band * g.wo]
        } else {
            Vec::new()
        };
        let w_t = MatRef::row_major(self.weight.data(), cout, kk).t();

        for b in 0..n {
            let xb = &x.data()[b * in_len..(b + 1) * in_len];
            let dyb = &dy.data()[b * cout * plane..(b + 1) * cout * plane];
            if let Some(gr) = grads.as_deref_mut() {
                for (co, chunk) in dyb.chunks(plane).enumerate() {
                    let s = chunk.iter().fold(T::zero(), |acc, &v| acc + v);
                    let db = &mut gr.bias.data_mut()[co];
                    *db = *db + s;
                }
            }
            let mut r0 = 0;
            while r0 < g.ho {
                let r1 = (r0 + band).min(g.ho);
                let l = (r1 - r0) * g.wo;
                let dy_band = MatRef {
                    data: &dyb[r0 * g.wo..],
                    rows: cout,
                    cols: l,
                    rs: plane,
                    cs: 1,
                };
                if let Some(gr) = grads.as_deref_mut() {
                    let cols = &mut cols[..kk * l];
                    g.im2col(xb, r0, r1, cols);
                    gemm(
                        T::one(),
                        dy_band,
                        MatRef::row_major(cols, kk, l).t(),
                        T::one(),
                        gr.weight.data_mut(),
                        kk,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let dcols = &mut dcols[..kk * l];
                    gemm(T::one(), w_t, dy_band, T::zero(), dcols, l);
                    g.col2im(dcols, r0, r1, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
                }
                r0 = r1;
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
