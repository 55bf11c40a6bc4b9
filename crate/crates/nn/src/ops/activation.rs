use crate::{Scalar, Tensor4};

/// `max(x, slope x)` for `0 <= slope < 1`.
pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    leaky_relu(x, T::zero())
}

/// Derivative is 1 for positive inputs and `slope` otherwise.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>, slope: T) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() {
            *gv = *gv * slope;
        }
    }
    g
}

/// `(tanh(x) + 1) / 2`, squashing onto `[0, 1]`.
pub fn unit_tanh<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let half = T::from_f64_lossy(0.5);
    x.map(|v| (v.tanh() + T::one()) * half)
}

/// Backward of [`unit_tanh`] given its output `y`.
pub fn unit_tanh_backward<T: Scalar>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let two = T::from_f64_lossy(2.0);
    let half = T::from_f64_lossy(0.5);
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        let t = two * yv - T::one();
        *gv = *gv * half * (T::one() - t * t);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape4;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn negative_side_is_scaled() {
        let y = leaky_relu(&row(&[-1.0, 0.0, 2.5]), 0.2);
        assert_eq!(y.data(), &[-0.2, 0.0, 2.5]);
        assert_eq!(relu(&row(&[-3.0, 4.0])).data(), &[0.0, 4.0]);
    }

    #[test]
    fn piecewise_derivative() {
        let g = leaky_relu_backward(&row(&[-2.0, 3.0]), &row(&[1.0, 1.0]), 0.2);
        assert_eq!(g.data(), &[0.2, 1.0]);
    }

    #[test]
    fn unit_tanh_range() {
        let y = unit_tanh(&row(&[-50.0, 0.0, 50.0]));
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    }
}
