use crate::tensor::{Scalar, Tensor};

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` with the positive part of the ReLU output `y`.
pub fn relu_backward<T: Scalar>(dy: &mut Tensor<T>, y: &Tensor<T>) {
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn leaky_relu_inplace<T: Scalar>(t: &mut Tensor<T>, slope: T) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// `y` is the activation output; sign is preserved for positive slopes.
pub fn leaky_relu_backward<T: Scalar>(dy: &mut Tensor<T>, y: &Tensor<T>, slope: T) {
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v < T::zero() {
            *d = *d * slope;
        }
    }
}

/// `0.5 * (tanh(x) + 1)`, squashing into `[0, 1]`.
pub fn unit_tanh_inplace<T: Scalar>(t: &mut Tensor<T>) {
    let half = T::of(0.5);
    for v in t.data_mut() {
        *v = half * (v.tanh() + T::one());
    }
}

/// Derivative expressed through the output: `2 y (1 - y)`.
pub fn unit_tanh_backward<T: Scalar>(dy: &mut Tensor<T>, y: &Tensor<T>) {
    let two = T::of(2.0);
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        *d = *d * two * v * (T::one() - v);
    }
}
