use crate::{NnError, Result, Scalar, Shape4, Tensor4};

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror borders without repeating the edge element; `pad < min(h, w)`.
pub fn reflection_pad2d<T: Scalar>(x: &Tensor4<T>, pad: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if pad >= s.h || pad >= s.w {
        return Err(NnError::Pad {
            pad,
            height: s.h,
            width: s.w,
        });
    }
    if pad == 0 {
        return Ok(x.clone());
    }
    let out = Shape4::new(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad);
    let p = pad as isize;
    Ok(Tensor4::from_fn(out, |n, c, h, w| {
        x.at(n, c, reflect(h as isize - p, s.h), reflect(w as isize - p, s.w))
    }))
}

pub fn reflection_pad2d_backward<T: Scalar>(input_shape: Shape4, grad_out: &Tensor4<T>, pad: usize) -> Tensor4<T> {
    let s = input_shape;
    if pad == 0 {
        return grad_out.clone();
    }
    let mut g = Tensor4::zeros(s);
    let go = grad_out.shape();
    let p = pad as isize;
    for n in 0..go.n {
        for c in 0..go.c {
            for h in 0..go.h {
                let ih = reflect(h as isize - p, s.h);
                for w in 0..go.w {
                    let iw = reflect(w as isize - p, s.w);
                    let idx = g.index(n, c, ih, iw);
                    g.data_mut()[idx] = g.data()[idx] + grad_out.at(n, c, h, w);
                }
            }
        }
    }
    g
}
