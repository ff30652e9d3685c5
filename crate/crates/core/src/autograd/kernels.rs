//! Dense array kernels for 2-D convolution and sub-pixel shuffling.
//!
//! Convolution is lowered to im2col + GEMM. The three convolution kernels
//! (forward, input-gradient, weight-gradient) form a closed family: each
//! one's derivatives are expressible with the other two, which is what lets
//! the tape differentiate through gradients (needed for the critic's
//! gradient penalty).
//!
//! Layout is NCHW for activations and OIKK for kernels. All kernels are
//! single-threaded and run in f64, so results are bitwise deterministic.

use ndarray::{s, Array2, Array4, ArrayView4, Axis};

/// Floor-division output extent of a strided window sweep.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(stride > 0, "stride must be positive");
    assert!(
        input + 2 * pad >= kernel,
        "kernel {kernel} larger than padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - kernel) / stride + 1
}

fn pad_nchw(x: &ArrayView4<f64>, pad: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    if pad == 0 {
        return x.to_owned();
    }
    let mut out = Array4::zeros((n, c, h + 2 * pad, w + 2 * pad));
    out.slice_mut(s![.., .., pad..pad + h, pad..pad + w]).assign(x);
    out
}

/// Gather sliding windows into a (N*OH*OW, C*K*K) matrix.
///
/// Row index is (n, oi, oj) in row-major order; column index is (c, p, q).
fn im2col(x: &ArrayView4<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_extent(h, k, stride, pad);
    let ow = conv_out_extent(w, k, stride, pad);
    let xp = pad_nchw(x, pad);
    let mut cols = Array2::zeros((n * oh * ow, c * k * k));
    for ni in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                let row = (ni * oh + oi) * ow + oj;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("im2col row is contiguous");
                let mut col = 0;
                for ci in 0..c {
                    for p in 0..k {
                        let src = xp.slice(s![ni, ci, oi * stride + p, oj * stride..oj * stride + k]);
                        let src = src.as_slice().expect("padded input row is contiguous");
                        dst[col..col + k].copy_from_slice(src);
                        col += k;
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of im2col's gather: the exact adjoint map.
fn col2im(
    cols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let oh = conv_out_extent(h, k, stride, pad);
    let ow = conv_out_extent(w, k, stride, pad);
    assert_eq!(cols.dim(), (n * oh * ow, c * k * k), "col2im shape mismatch");
    let mut xp = Array4::zeros((n, c, h + 2 * pad, w + 2 * pad));
    for ni in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                let row = (ni * oh + oi) * ow + oj;
                let src = cols.row(row);
                let src = src.as_slice().expect("col2im row is contiguous");
                let mut col = 0;
                for ci in 0..c {
                    for p in 0..k {
                        let mut dst = xp.slice_mut(s![ni, ci, oi * stride + p, oj * stride..oj * stride + k]);
                        let dst = dst.as_slice_mut().expect("padded input row is contiguous");
                        for q in 0..k {
                            dst[q] += src[col + q];
                        }
                        col += k;
                    }
                }
            }
        }
    }
    xp.slice(s![.., .., pad..pad + h, pad..pad + w]).to_owned()
}

/// Cross-correlation: y[n,o,i,j] = sum_{c,p,q} x[n,c,i*s-pad+p,j*s-pad+q] * w[o,c,p,q].
pub fn conv2d(x: &ArrayView4<f64>, w: &ArrayView4<f64>, stride: usize, pad: usize) -> Array4<f64> {
    let (n, c, h, width) = x.dim();
    let (o, wc, k, k2) = w.dim();
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, kernel {wc}");
    assert_eq!(k, k2, "conv2d kernels must be square");
    let oh = conv_out_extent(h, k, stride, pad);
    let ow = conv_out_extent(width, k, stride, pad);
    let cols = im2col(x, k, stride, pad);
    let w_mat = w
        .to_shape((o, c * k * k))
        .expect("kernel reshapes to matrix")
        .to_owned();
    let y_mat = cols.dot(&w_mat.t()); // (N*OH*OW, O)
    let y = y_mat
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, oh, ow, o))
        .expect("conv2d output reshape");
    y.permuted_axes([0, 3, 1, 2]).as_standard_layout().to_owned()
}

/// Gradient of conv2d with respect to its input: the adjoint of x -> conv2d(x, w).
///
/// `hw` is the original input's spatial extent, which floor division in the
/// forward pass cannot recover.
pub fn conv2d_input_grad(
    gy: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    hw: (usize, usize),
) -> Array4<f64> {
    let (n, o, oh, ow) = gy.dim();
    let (wo, c, k, _) = w.dim();
    assert_eq!(o, wo, "conv2d_input_grad output-channel mismatch");
    assert_eq!(oh, conv_out_extent(hw.0, k, stride, pad), "conv2d_input_grad height mismatch");
    assert_eq!(ow, conv_out_extent(hw.1, k, stride, pad), "conv2d_input_grad width mismatch");
    let gy_mat = gy
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((n * oh * ow, o))
        .expect("gy reshapes to matrix");
    let w_mat = w
        .to_shape((o, c * k * k))
        .expect("kernel reshapes to matrix")
        .to_owned();
    let cols_g = gy_mat.dot(&w_mat).as_standard_layout().into_owned(); // (N*OH*OW, C*K*K)
    col2im(&cols_g, n, c, hw.0, hw.1, k, stride, pad)
}

/// Gradient of conv2d with respect to its kernel: the adjoint of w -> conv2d(x, w).
pub fn conv2d_weight_grad(
    x: &ArrayView4<f64>,
    gy: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    k: usize,
) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (gn, o, oh, ow) = gy.dim();
    assert_eq!(n, gn, "conv2d_weight_grad batch mismatch");
    assert_eq!(oh, conv_out_extent(h, k, stride, pad), "conv2d_weight_grad height mismatch");
    assert_eq!(ow, conv_out_extent(w, k, stride, pad), "conv2d_weight_grad width mismatch");
    let cols = im2col(x, k, stride, pad);
    let gy_mat = gy
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((n * oh * ow, o))
        .expect("gy reshapes to matrix");
    let gw_mat = gy_mat.t().dot(&cols); // (O, C*K*K)
    gw_mat
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, c, k, k))
        .expect("weight gradient reshape")
}

/// Rearrange (N, C*r^2, H, W) to (N, C, H*r, W*r):
/// y[n, c, i*r+di, j*r+dj] = x[n, (c*r+di)*r+dj, i, j].
pub fn pixel_shuffle(x: &ArrayView4<f64>, r: usize) -> Array4<f64> {
    let (n, cr2, h, w) = x.dim();
    assert!(r > 0 && cr2 % (r * r) == 0, "pixel_shuffle channels {cr2} not divisible by {}", r * r);
    let c = cr2 / (r * r);
    let mut y = Array4::zeros((n, c, h * r, w * r));
    for ni in 0..n {
        for ci in 0..c {
            for di in 0..r {
                for dj in 0..r {
                    let plane = x.index_axis(Axis(0), ni);
                    let plane = plane.index_axis(Axis(0), (ci * r + di) * r + dj);
                    let mut dst = y.slice_mut(s![ni, ci, di..;r, dj..;r]);
                    dst.assign(&plane);
                }
            }
        }
    }
    y
}

/// Exact inverse (and adjoint) of `pixel_shuffle`.
pub fn pixel_unshuffle(y: &ArrayView4<f64>, r: usize) -> Array4<f64> {
    let (n, c, hr, wr) = y.dim();
    assert!(r > 0 && hr % r == 0 && wr % r == 0, "pixel_unshuffle extent not divisible by {r}");
    let (h, w) = (hr / r, wr / r);
    let mut x = Array4::zeros((n, c * r * r, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for di in 0..r {
                for dj in 0..r {
                    let src = y.slice(s![ni, ci, di..;r, dj..;r]);
                    let mut dst = x.index_axis_mut(Axis(0), ni);
                    let mut dst = dst.index_axis_mut(Axis(0), (ci * r + di) * r + dj);
                    dst.assign(&src);
                }
            }
        }
    }
    x
}
