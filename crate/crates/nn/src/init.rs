//! Seedable weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Scalar, Shape4, Tensor4};

/// Kaiming-normal weights, `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(shape: Shape4, fan_in: usize, rng: &mut R) -> Tensor4<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.len()).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}

/// `out_c x in_c x k x k` convolution weights; fan-in is `in_c k k`.
pub fn conv_weight<T: Scalar, R: Rng + ?Sized>(out_c: usize, in_c: usize, k: usize, rng: &mut R) -> Tensor4<T> {
    kaiming_normal(Shape4::new(out_c, in_c, k, k), in_c * k * k, rng)
}

/// `in_c x out_c x k x k` transposed-convolution weights.
///
/// Each output pixel receives about `in_c k^2 / stride^2` contributions, which is used as fan-in.
pub fn conv_transpose_weight<T: Scalar, R: Rng + ?Sized>(
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    rng: &mut R,
) -> Tensor4<T> {
    let fan_in = (in_c * k * k) / (stride * stride).max(1);
    kaiming_normal(Shape4::new(in_c, out_c, k, k), fan_in, rng)
}

pub fn bias<T: Scalar>(channels: usize) -> Tensor4<T> {
    Tensor4::zeros(Shape4::new(1, channels, 1, 1))
}
