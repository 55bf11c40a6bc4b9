use crate::{Scalar, Tensor4};

/// Normalized activations plus the per-plane inverse standard deviations needed for backward.
#[derive(Debug, Clone)]
pub struct InstanceNormOutput<T> {
    pub output: Tensor4<T>,
    pub inv_std: Vec<T>,
}

/// Per-(sample, channel) plane standardization without affine parameters.
pub fn instance_norm<T: Scalar>(x: &Tensor4<T>, eps: T) -> InstanceNormOutput<T> {
    let s = x.shape();
    let plane = s.plane();
    let count = T::from_usize(plane).unwrap();
    let mut output = x.clone();
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for chunk in output.data_mut().chunks_mut(plane) {
        // rounding in the mean would otherwise leave ulp-sized residues on flat planes
        if chunk.iter().all(|&v| v == chunk[0]) {
            chunk.fill(T::zero());
            inv_std.push(T::one() / eps.sqrt());
            continue;
        }
        let mean = chunk.iter().copied().sum::<T>() / count;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        for v in chunk.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    InstanceNormOutput { output, inv_std }
}

/// `dx = inv_std (dy - mean(dy) - y mean(dy y))` per plane, with `y` the normalized output.
pub fn instance_norm_backward<T: Scalar>(y: &Tensor4<T>, inv_std: &[T], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let plane = y.shape().plane();
    let count = T::from_usize(plane).unwrap();
    let mut g = grad_out.clone();
    for ((gc, yc), &inv) in g.data_mut().chunks_mut(plane).zip(y.data().chunks(plane)).zip(inv_std) {
        let mean_g = gc.iter().copied().sum::<T>() / count;
        let mean_gy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<T>() / count;
        for (gv, &yv) in gc.iter_mut().zip(yc) {
            *gv = inv * (*gv - mean_g - yv * mean_gy);
        }
    }
    g
}
