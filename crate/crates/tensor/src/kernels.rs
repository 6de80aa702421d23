//! Dense kernels behind the differentiable ops. Convolutions are lowered to
//! a single GEMM over the whole batch via im2col / col2im.

use crate::tensor::Tensor;

/// `a·b` into a fresh row-major `m x n` buffer.
fn gemm_fresh(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize)) -> Vec<f64> {
    let mut c: Vec<f64> = Vec::with_capacity(m * n);
    if m == 0 || n == 0 {
        return c;
    }
    if k == 0 {
        c.resize(m * n, 0.0);
        return c;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    // SAFETY: operand bounds are asserted above; with beta = 0 dgemm writes
    // every element of the m x n output without reading it, after which the
    // length can be set.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(
        a.ndim() == 2 && b.ndim() == 2 && a.shape()[1] == b.shape()[0],
        "matmul shape mismatch: {:?} x {:?}",
        a.shape(),
        b.shape()
    );
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let out = gemm_fresh(m, k, n, a.data(), (k, 1), b.data(), (n, 1));
    Tensor::new(&[m, n], out)
}

/// Output length of a strided 1-D convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let padded = len + 2 * pad;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

/// Output length of a transposed convolution before any output padding.
pub fn conv_transpose1d_base_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    ((len.max(1) - 1) * stride + kernel).saturating_sub(2 * pad)
}

/// Output positions `t` in `0..lo` whose tap `t*stride + kk - pad` falls in `0..len`.
fn valid_taps(len: usize, lo: usize, kk: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let start = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
    let end = if len + pad > kk {
        ((len + pad - kk - 1) / stride + 1).min(lo)
    } else {
        0
    };
    start.min(end)..end
}

/// im2col: `cols[(ci*k + kk), b*lo + t] = x[b, ci, t*s + kk - p]`.
fn im2col(x: &Tensor, kernel: usize, stride: usize, pad: usize, lo: usize) -> Vec<f64> {
    let (bsz, ci, len) = dims3(x);
    let ncols = bsz * lo;
    let mut cols = Vec::with_capacity(ci * kernel * ncols);
    let xd = x.data();
    for c in 0..ci {
        for kk in 0..kernel {
            let taps = valid_taps(len, lo, kk, stride, pad);
            for b in 0..bsz {
                let src = &xd[(b * ci + c) * len..(b * ci + c + 1) * len];
                cols.resize(cols.len() + taps.start, 0.0);
                let first = taps.start * stride + kk - pad;
                cols.extend(src[first..].iter().step_by(stride).take(taps.len()));
                cols.resize(cols.len() + lo - taps.end, 0.0);
            }
        }
    }
    cols
}

/// `[B, C, L]` → `[C, B*L]`.
fn to_channel_major(x: &Tensor) -> Vec<f64> {
    let (bsz, c, len) = dims3(x);
    let mut out = Vec::with_capacity(c * bsz * len);
    let xd = x.data();
    for ch in 0..c {
        for b in 0..bsz {
            out.extend_from_slice(&xd[(b * c + ch) * len..(b * c + ch + 1) * len]);
        }
    }
    out
}

/// `[C, B*L]` → `[B, C, L]`.
fn from_channel_major(cm: &[f64], bsz: usize, c: usize, len: usize) -> Tensor {
    let mut out = Vec::with_capacity(bsz * c * len);
    for b in 0..bsz {
        for ch in 0..c {
            out.extend_from_slice(&cm[ch * bsz * len + b * len..ch * bsz * len + (b + 1) * len]);
        }
    }
    Tensor::new(&[bsz, c, len], out)
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.ndim(), 3, "expected [batch, channels, length], got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

/// `x: [B, Ci, L]`, `w: [Co, Ci, K]` → `[B, Co, Lo]`.
pub(crate) fn conv1d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (bsz, ci, len) = dims3(x);
    let (co, wci, kernel) = dims3(w);
    assert_eq!(ci, wci, "conv1d channel mismatch: input {ci}, weight {wci}");
    let lo = conv1d_out_len(len, kernel, stride, pad);
    let cols = im2col(x, kernel, stride, pad, lo);
    let ncols = bsz * lo;
    let out = gemm_fresh(co, ci * kernel, ncols, w.data(), (ci * kernel, 1), &cols, (ncols, 1));
    from_channel_major(&out, bsz, co, lo)
}

/// `x: [B, Ci, L]`, `w: [Ci, Co, K]` → `[B, Co, out_len]`.
pub(crate) fn conv_transpose1d(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out_len: usize,
) -> Tensor {
    let (bsz, ci, len) = dims3(x);
    let (wci, co, kernel) = dims3(w);
    assert_eq!(ci, wci, "conv_transpose1d channel mismatch: input {ci}, weight {wci}");
    let xcm = to_channel_major(x);
    let ncols = bsz * len;
    // cols[(o*K + kk), b*L + t] = sum_i w[i, o, kk] * x[b, i, t]
    let cols = gemm_fresh(co * kernel, ci, ncols, w.data(), (1, co * kernel), &xcm, (ncols, 1));
    let mut out = vec![0.0; bsz * co * out_len];
    for o in 0..co {
        for kk in 0..kernel {
            let row = &cols[(o * kernel + kk) * ncols..(o * kernel + kk + 1) * ncols];
            // input positions t landing inside the output: t*stride + kk - pad in 0..out_len
            let taps = valid_taps(out_len, len, kk, stride, pad);
            if taps.is_empty() {
                continue;
            }
            let first = taps.start * stride + kk - pad;
            for b in 0..bsz {
                let dst = &mut out[(b * co + o) * out_len..(b * co + o + 1) * out_len];
                let src = &row[b * len + taps.start..b * len + taps.end];
                for (d, v) in dst[first..].iter_mut().step_by(stride).zip(src) {
                    *d += v;
                }
            }
        }
    }
    Tensor::new(&[bsz, co, out_len], out)
}

/// Weight gradient of [`conv1d`]: `x: [B, Ci, L]`, `gy: [B, Co, Lo]` → `[Co, Ci, K]`.
pub(crate) fn conv1d_weight_grad(
    x: &Tensor,
    gy: &Tensor,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (bsz, ci, _) = dims3(x);
    let (gb, co, lo) = dims3(gy);
    assert_eq!(bsz, gb, "batch mismatch in conv weight gradient");
    let cols = im2col(x, kernel, stride, pad, lo);
    let gcm = to_channel_major(gy);
    let ncols = bsz * lo;
    let out = gemm_fresh(co, ncols, ci * kernel, &gcm, (ncols, 1), &cols, (1, ncols));
    Tensor::new(&[co, ci, kernel], out)
}
