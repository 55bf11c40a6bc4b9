use crate::{NnError, Result, Scalar, Shape4, Tensor4};

/// Stride and zero padding, shared by both square-kernel convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_pad: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            output_pad: 0,
        }
    }

    pub const fn with_output_pad(mut self, output_pad: usize) -> Self {
        self.output_pad = output_pad;
        self
    }
}

/// `floor((dim + 2 pad - k) / stride) + 1`, or `None` when the kernel does not fit.
pub fn conv2d_output_dim(dim: usize, k: usize, spec: ConvSpec) -> Option<usize> {
    let padded = dim + 2 * spec.pad;
    if spec.stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / spec.stride + 1)
}

/// `(dim - 1) stride - 2 pad + k + output_pad`.
pub fn conv_transpose2d_output_dim(dim: usize, k: usize, spec: ConvSpec) -> Option<usize> {
    if dim == 0 || spec.stride == 0 || spec.output_pad >= spec.stride {
        return None;
    }
    ((dim - 1) * spec.stride + k + spec.output_pad).checked_sub(2 * spec.pad)
}

/// Gradients produced by the convolution backward kernels. Unrequested parts are `None`.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Option<Tensor4<T>>,
    pub bias: Option<Tensor4<T>>,
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold one sample into a `(c k k) x (out_h out_w)` column matrix.
fn im2col<T: Scalar>(src: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the sample grid.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, dst: &mut [T]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn square_kernel(op: &'static str, w: Shape4) -> Result<usize> {
    if w.h != w.w || w.h == 0 {
        return Err(NnError::shape(op, "square kernel", w));
    }
    Ok(w.h)
}

fn check_bias(op: &'static str, bias: Option<&Tensor4<impl Scalar>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let want = Shape4::new(1, channels, 1, 1);
        if b.shape() != want {
            return Err(NnError::shape(op, want, b.shape()));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut Tensor4<T>, bias: &Tensor4<T>) {
    let s = out.shape();
    let plane = s.plane();
    for n in 0..s.n {
        let sample = out.sample_mut(n);
        for (c, &b) in bias.data().iter().enumerate() {
            for v in &mut sample[c * plane..(c + 1) * plane] {
                *v = *v + b;
            }
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    let s = grad_out.shape();
    let plane = s.plane();
    let mut g = Tensor4::zeros(Shape4::new(1, s.c, 1, 1));
    for n in 0..s.n {
        let sample = grad_out.sample(n);
        for c in 0..s.c {
            let acc: T = sample[c * plane..(c + 1) * plane].iter().copied().sum();
            g.data_mut()[c] = g.data_mut()[c] + acc;
        }
    }
    g
}

fn conv_geometry(op: &'static str, x: Shape4, w: Shape4, spec: ConvSpec) -> Result<Geometry> {
    let k = square_kernel(op, w)?;
    if w.c != x.c {
        return Err(NnError::Shape {
            op,
            expected: format!("weight with {} input channels", x.c),
            got: w.to_string(),
        });
    }
    let dims = conv2d_output_dim(x.h, k, spec).zip(conv2d_output_dim(x.w, k, spec));
    let (out_h, out_w) = dims.ok_or_else(|| NnError::Shape {
        op,
        expected: format!("input of at least {k}x{k} after padding {}", spec.pad),
        got: x.to_string(),
    })?;
    Ok(Geometry {
        channels: x.c,
        height: x.h,
        width: x.w,
        k,
        stride: spec.stride,
        pad: spec.pad,
        out_h,
        out_w,
    })
}

/// Zero-padded 2-D cross-correlation. `w` is `out_c x in_c x k x k`, `bias` is `1 x out_c x 1 x 1`.
pub fn conv2d<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    spec: ConvSpec,
) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let g = conv_geometry("conv2d", xs, ws, spec)?;
    check_bias("conv2d", bias, ws.n)?;
    let out_c = ws.n;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, out_c, g.out_h, g.out_w));
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        im2col(x.sample(n), &g, &mut col);
        T::gemm(
            out_c,
            rows,
            cols,
            T::one(),
            w.data(),
            (rows, 1),
            &col,
            (cols, 1),
            T::zero(),
            out.sample_mut(n),
            (cols, 1),
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

/// Reference quadruple loop used to validate the lowered [`conv2d`].
pub fn conv2d_naive<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    spec: ConvSpec,
) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let g = conv_geometry("conv2d", xs, ws, spec)?;
    check_bias("conv2d", bias, ws.n)?;
    Ok(Tensor4::from_fn(
        Shape4::new(xs.n, ws.n, g.out_h, g.out_w),
        |n, o, oy, ox| {
            let mut acc = bias.map_or(T::zero(), |b| b.data()[o]);
            for c in 0..xs.c {
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc = acc + x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ki, kj);
                        }
                    }
                }
            }
            acc
        },
    ))
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (need_input, need_weight, need_bias) = need;
    let xs = x.shape();
    let ws = w.shape();
    let g = conv_geometry("conv2d_backward", xs, ws, spec)?;
    let expect = Shape4::new(xs.n, ws.n, g.out_h, g.out_w);
    if grad_out.shape() != expect {
        return Err(NnError::shape("conv2d_backward", expect, grad_out.shape()));
    }
    let out_c = ws.n;
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut grad_x = need_input.then(|| Tensor4::zeros(xs));
    let mut grad_w = need_weight.then(|| Tensor4::zeros(ws));
    for n in 0..xs.n {
        let gy = grad_out.sample(n);
        if let Some(gw) = grad_w.as_mut() {
            im2col(x.sample(n), &g, &mut col);
            // dW += dY_n (out_c x cols) * col^T (cols x rows)
            T::gemm(
                out_c,
                cols,
                rows,
                T::one(),
                gy,
                (cols, 1),
                &col,
                (1, cols),
                T::one(),
                gw.data_mut(),
                (rows, 1),
            );
        }
        if let Some(gx) = grad_x.as_mut() {
            // dcol = W^T (rows x out_c) * dY_n (out_c x cols)
            T::gemm(
                rows,
                out_c,
                cols,
                T::one(),
                w.data(),
                (1, rows),
                gy,
                (cols, 1),
                T::zero(),
                &mut col,
                (cols, 1),
            );
            col2im(&col, &g, gx.sample_mut(n));
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        weight: grad_w,
        bias: need_bias.then(|| bias_grad(grad_out)),
    })
}

/// Geometry of the equivalent forward convolution: the transposed output plays the conv input.
fn transpose_geometry(op: &'static str, x: Shape4, w: Shape4, spec: ConvSpec) -> Result<Geometry> {
    let k = square_kernel(op, w)?;
    if w.n != x.c {
        return Err(NnError::Shape {
            op,
            expected: format!("weight with {} input channels on axis 0", x.c),
            got: w.to_string(),
        });
    }
    let dims = conv_transpose2d_output_dim(x.h, k, spec).zip(conv_transpose2d_output_dim(x.w, k, spec));
    let (out_h, out_w) = dims.ok_or_else(|| NnError::Shape {
        op,
        expected: format!("positive output size for k={k}, {spec:?}"),
        got: x.to_string(),
    })?;
    Ok(Geometry {
        channels: w.c,
        height: out_h,
        width: out_w,
        k,
        stride: spec.stride,
        pad: spec.pad,
        out_h: x.h,
        out_w: x.w,
    })
}

/// Transposed convolution (adjoint of [`conv2d`]). `w` is `in_c x out_c x k x k`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    spec: ConvSpec,
) -> Result<Tensor4<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let g = transpose_geometry("conv_transpose2d", xs, ws, spec)?;
    check_bias("conv_transpose2d", bias, ws.c)?;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, ws.c, g.height, g.width));
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        // col = W^T (rows x in_c) * x_n (in_c x cols)
        T::gemm(
            rows,
            xs.c,
            cols,
            T::one(),
            w.data(),
            (1, rows),
            x.sample(n),
            (cols, 1),
            T::zero(),
            &mut col,
            (cols, 1),
        );
        col2im(&col, &g, out.sample_mut(n));
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (need_input, need_weight, need_bias) = need;
    let xs = x.shape();
    let ws = w.shape();
    let g = transpose_geometry("conv_transpose2d_backward", xs, ws, spec)?;
    let expect = Shape4::new(xs.n, ws.c, g.height, g.width);
    if grad_out.shape() != expect {
        return Err(NnError::shape("conv_transpose2d_backward", expect, grad_out.shape()));
    }
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut grad_x = need_input.then(|| Tensor4::zeros(xs));
    let mut grad_w = need_weight.then(|| Tensor4::zeros(ws));
    if need_input || need_weight {
        for n in 0..xs.n {
            im2col(grad_out.sample(n), &g, &mut col);
            if let Some(gx) = grad_x.as_mut() {
                T::gemm(
                    xs.c,
                    rows,
                    cols,
                    T::one(),
                    w.data(),
                    (rows, 1),
                    &col,
                    (cols, 1),
                    T::zero(),
                    gx.sample_mut(n),
                    (cols, 1),
                );
            }
            if let Some(gw) = grad_w.as_mut() {
                // dW += x_n (in_c x cols) * col^T (cols x rows)
                T::gemm(
                    xs.c,
                    cols,
                    rows,
                    T::one(),
                    x.sample(n),
                    (cols, 1),
                    &col,
                    (1, cols),
                    T::one(),
                    gw.data_mut(),
                    (rows, 1),
                );
            }
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        weight: grad_w,
        bias: need_bias.then(|| bias_grad(grad_out)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn strided_7x7_shape() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 128, 128));
        let w = Tensor4::<f32>::zeros(Shape4::new(8, 1, 7, 7));
        let y = conv2d(&x, &w, None, ConvSpec::new(2, 3)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 8, 64, 64));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = random(Shape4::new(2, 1, 6, 5), 1);
        let w = Tensor4::full(Shape4::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &w, None, ConvSpec::new(1, 0)).unwrap(), x);
        assert_eq!(conv_transpose2d(&x, &w, None, ConvSpec::new(1, 0)).unwrap(), x);
    }

    #[test]
    fn lowered_matches_naive_loop() {
        for (seed, (k, stride, pad)) in [(3, 1, 1), (4, 2, 1), (7, 2, 3), (3, 2, 0)].into_iter().enumerate() {
            let x = random(Shape4::new(2, 3, 11, 9), seed as u64);
            let w = random(Shape4::new(4, 3, k, k), 100 + seed as u64);
            let b = random(Shape4::new(1, 4, 1, 1), 200 + seed as u64);
            let spec = ConvSpec::new(stride, pad);
            let fast = conv2d(&x, &w, Some(&b), spec).unwrap();
            let slow = conv2d_naive(&x, &w, Some(&b), spec).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn transposed_shapes() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 8, 16, 16));
        let w = Tensor4::<f32>::zeros(Shape4::new(8, 4, 4, 4));
        let y = conv_transpose2d(&x, &w, None, ConvSpec::new(2, 1)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 4, 32, 32));
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 4, 64, 64));
        let w = Tensor4::<f32>::zeros(Shape4::new(4, 1, 7, 7));
        let y = conv_transpose2d(&x, &w, None, ConvSpec::new(2, 3).with_output_pad(1)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 128, 128));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 8, 8));
        let w = Tensor4::<f32>::zeros(Shape4::new(4, 2, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, None, ConvSpec::new(1, 1)),
            Err(NnError::Shape { .. })
        ));
        let w = Tensor4::<f32>::zeros(Shape4::new(2, 4, 3, 3));
        assert!(matches!(
            conv_transpose2d(&x, &w, None, ConvSpec::new(1, 1)),
            Err(NnError::Shape { .. })
        ));
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 2, 2));
        let w = Tensor4::<f32>::zeros(Shape4::new(1, 1, 5, 5));
        assert!(conv2d(&x, &w, None, ConvSpec::new(1, 0)).is_err());
    }
}
