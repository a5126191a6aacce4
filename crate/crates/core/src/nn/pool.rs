use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of the selected maxima, one per output element.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2x2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolIndices) {
    let (n, c, h, w) = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let src = x.data();
    let dst = y.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [best + 1, best + w, best + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    (
        y,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    )
}

pub fn max_pool2x2_backward<T: Scalar>(dy: &Tensor<T>, idx: &PoolIndices) -> Tensor<T> {
    assert_eq!(dy.len(), idx.argmax.len(), "pool backward: dy size");
    let mut dx = Tensor::zeros(&idx.input_shape);
    let out = dx.data_mut();
    for (&d, &i) in dy.data().iter().zip(&idx.argmax) {
        out[i as usize] = out[i as usize] + d;
    }
    dx
}
