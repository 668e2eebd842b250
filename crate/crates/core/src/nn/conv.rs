//! im2col-based 2D convolution and its backward pass.
//!
//! The batch is processed sample by sample so every GEMM sees contiguous
//! views; `matrixmultiply` (via `ndarray::dot`) does the heavy lifting.

use ndarray::{linalg::general_mat_mul, Array2, Array4, ArrayD, Ix1, Ix4, s};

use super::Scalar;

/// Output spatial size for one axis.
pub(crate) fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Gather conv patches of one (C,H,W) sample into a (C*K*K, Ho*Wo) matrix.
pub(crate) fn im2col<A: Scalar>(
    x: &ndarray::ArrayView3<'_, A>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<A> {
    let (ch, h, w) = x.dim();
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut cols = Array2::<A>::zeros((ch * k * k, ho * wo));
    for ci in 0..ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut row_view = cols.row_mut(row);
                let row_slice = row_view.as_slice_mut().unwrap();
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row_slice[base + ox] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a (C*K*K, Ho*Wo) gradient matrix back onto a (C,H,W) sample.
pub(crate) fn col2im<A: Scalar>(
    cols: &Array2<A>,
    ch: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<A> {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut out = ndarray::Array3::<A>::zeros((ch, h, w));
    for ci in 0..ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_view = cols.row(row);
                let row_slice = row_view.as_slice().unwrap();
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[[ci, iy as usize, ix as usize]] += row_slice[base + ox];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_forward<A: Scalar>(
    x: &ArrayD<A>,
    w: &ArrayD<A>,
    b: &ArrayD<A>,
    stride: usize,
    pad: usize,
) -> ArrayD<A> {
    let x = x.view().into_dimensionality::<Ix4>().expect("conv input must be (B,C,H,W)");
    let w = w.view().into_dimensionality::<Ix4>().expect("conv weight must be (Cout,Cin,K,K)");
    let b = b.view().into_dimensionality::<Ix1>().expect("conv bias must be (Cout)");
    let (bs, cin, h, wd) = x.dim();
    let (cout, cin_w, k, k2) = w.dim();
    assert_eq!(cin, cin_w, "channel mismatch");
    assert_eq!(k, k2, "kernel must be square");
    assert_eq!(b.len(), cout);
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(wd, k, stride, pad);

    let w2 = w.into_shape_with_order((cout, cin * k * k)).unwrap();
    let mut out = Array4::<A>::zeros((bs, cout, ho, wo));
    for bi in 0..bs {
        let cols = im2col(&x.slice(s![bi, .., .., ..]), k, stride, pad);
        let mut out_b = out
            .slice_mut(s![bi, .., .., ..])
            .into_shape_with_order((cout, ho * wo))
            .unwrap();
        general_mat_mul(A::one(), &w2, &cols, A::zero(), &mut out_b);
        for (ci, mut row) in out_b.outer_iter_mut().enumerate() {
            let bias = b[ci];
            row.mapv_inplace(|v| v + bias);
        }
    }
    out.into_dyn()
}

/// Returns (grad_x, grad_w, grad_b); `grad_x` is computed only when wanted.
pub(crate) fn conv2d_backward<A: Scalar>(
    x: &ArrayD<A>,
    w: &ArrayD<A>,
    gout: &ArrayD<A>,
    stride: usize,
    pad: usize,
    want_dx: bool,
) -> (Option<ArrayD<A>>, ArrayD<A>, ArrayD<A>) {
    let x = x.view().into_dimensionality::<Ix4>().unwrap();
    let w = w.view().into_dimensionality::<Ix4>().unwrap();
    let go = gout.view().into_dimensionality::<Ix4>().unwrap();
    let (bs, cin, h, wd) = x.dim();
    let (cout, _, k, _) = w.dim();
    let (_, _, ho, wo) = go.dim();

    let w2 = w.into_shape_with_order((cout, cin * k * k)).unwrap();
    let mut gw2 = Array2::<A>::zeros((cout, cin * k * k));
    let mut gb = ndarray::Array1::<A>::zeros(cout);
    let mut gx = if want_dx { Some(Array4::<A>::zeros((bs, cin, h, wd))) } else { None };

    for bi in 0..bs {
        let go_b = go
            .slice(s![bi, .., .., ..])
            .into_shape_with_order((cout, ho * wo))
            .unwrap();
        // bias: spatial sums per channel
        for (ci, row) in go_b.outer_iter().enumerate() {
            gb[ci] += row.iter().fold(A::zero(), |a, &v| a + v);
        }
        // weights: dW += dOut_b * cols^T (cols recomputed, not cached)
        let cols = im2col(&x.slice(s![bi, .., .., ..]), k, stride, pad);
        general_mat_mul(A::one(), &go_b, &cols.t(), A::one(), &mut gw2);
        // input: dCols = W^T * dOut_b, scattered back
        if let Some(gx) = gx.as_mut() {
            let mut gcols = Array2::<A>::zeros((cin * k * k, ho * wo));
            general_mat_mul(A::one(), &w2.t(), &go_b, A::zero(), &mut gcols);
            let gx_b = col2im(&gcols, cin, h, wd, k, stride, pad);
            gx.slice_mut(s![bi, .., .., ..]).assign(&gx_b);
        }
    }

    let gw = gw2.into_shape_with_order((cout, cin, k, k)).unwrap();
    (gx.map(|a| a.into_dyn()), gw.into_dyn(), gb.into_dyn())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn conv_identity_kernel_passes_through() {
        // 1x1 kernel with identity weights reproduces the input.
        let x = Array4::from_shape_fn((1, 2, 4, 4), |(_, c, y, xx)| {
            (c * 100 + y * 10 + xx) as f64
        })
        .into_dyn();
        let mut w = Array4::<f64>::zeros((2, 2, 1, 1));
        w[[0, 0, 0, 0]] = 1.0;
        w[[1, 1, 0, 0]] = 1.0;
        let b = ndarray::Array1::<f64>::zeros(2).into_dyn();
        let out = conv2d_forward(&x, &w.into_dyn(), &b, 1, 0);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_known_3x3_sum_kernel() {
        // all-ones 3x3 kernel on an all-ones 4x4 input, pad 1: interior pixels
        // see 9 ones, corners 4, edges 6.
        let x = Array4::<f64>::ones((1, 1, 4, 4)).into_dyn();
        let w = Array4::<f64>::ones((1, 1, 3, 3)).into_dyn();
        let b = ndarray::Array1::<f64>::zeros(1).into_dyn();
        let out = conv2d_forward(&x, &w, &b, 1, 1);
        let o = out.view().into_dimensionality::<Ix4>().unwrap();
        assert_eq!(o[[0, 0, 0, 0]], 4.0);
        assert_eq!(o[[0, 0, 0, 1]], 6.0);
        assert_eq!(o[[0, 0, 1, 1]], 9.0);
    }

    #[test]
    fn stride_two_halves_resolution() {
        let x = Array4::<f64>::ones((2, 3, 8, 8)).into_dyn();
        let w = Array4::<f64>::ones((5, 3, 3, 3)).into_dyn();
        let b = ndarray::Array1::<f64>::zeros(5).into_dyn();
        let out = conv2d_forward(&x, &w, &b, 2, 1);
        assert_eq!(out.shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn im2col_col2im_adjoint_property() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y (adjointness).
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Array3::from_shape_fn((3, 6, 6), |_| r.gen_range(-1.0..1.0f64));
        let cols_shape = (3 * 9, conv_out_size(6, 3, 2, 1) * conv_out_size(6, 3, 2, 1));
        let y = Array2::from_shape_fn(cols_shape, |_| r.gen_range(-1.0..1.0f64));
        let cols = im2col(&x.view(), 3, 2, 1);
        let lhs: f64 = (&cols * &y).sum();
        let back = col2im(&y, 3, 6, 6, 3, 2, 1);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
