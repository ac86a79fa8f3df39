//! Forward kernels and their vector-Jacobian products.
//!
//! Convolutions are 3x3, stride 1, zero padding 1, lowered to im2col + SGEMM
//! (f32 accumulation). Dense layers accumulate in f64 and round once.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

const K: usize = 3;
const KK: usize = K * K;

fn check_bias(bias: &Tensor, co: usize, op: &str) -> Result<()> {
    if bias.len() != co {
        return Err(dim_err!("{op}: bias has {} values, expected {co}", bias.len()));
    }
    Ok(())
}

fn check_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<()> {
    let [co, ci, kh, kw] = weights.shape();
    if kh != K || kw != K {
        return Err(dim_err!("conv2d: kernel must be 3x3, got {kh}x{kw}"));
    }
    if input.c() != ci {
        return Err(dim_err!(
            "conv2d: input has {} channels, weights expect {ci}",
            input.c()
        ));
    }
    check_bias(bias, co, "conv2d")
}

/// Lowers one sample `[ci, h, w]` into a `[ci*9, h*w]` patch matrix.
fn im2col(sample: &[f32], ci: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    for i in 0..ci {
        let plane = &sample[i * hw..(i + 1) * hw];
        for dy in 0..K {
            for dx in 0..K {
                let row = &mut col[(i * KK + dy * K + dx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // x + dx - 1 in range
                    match dx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f32], ci: usize, h: usize, w: usize, sample: &mut [f32]) {
    let hw = h * w;
    for i in 0..ci {
        let plane = &mut sample[i * hw..(i + 1) * hw];
        for dy in 0..K {
            for dx in 0..K {
                let row = &col[(i * KK + dy * K + dx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * a(m x k) * b(k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: all strides describe in-bounds accesses of the given slices,
    // and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3x3 convolution, stride 1, zero padding 1. Output spatial size equals input.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_conv(input, weights, bias)?;
    let [n, ci, h, w] = input.shape();
    let co = weights.shape()[0];
    let hw = h * w;
    let kdim = ci * KK;
    let mut out = Tensor::zeros([n, co, h, w]);
    let mut col = vec![0.0f32; kdim * hw];
    for s in 0..n {
        im2col(input.sample(s), ci, h, w, &mut col);
        let dst = &mut out.data_mut()[s * co * hw..(s + 1) * co * hw];
        for (o, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(
            co,
            kdim,
            hw,
            weights.data(),
            (kdim as isize, 1),
            &col,
            (hw as isize, 1),
            1.0,
            dst,
        );
    }
    Ok(out)
}

pub(crate) struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> ConvGrads {
    let [n, ci, h, w] = input.shape();
    let co = weights.shape()[0];
    let hw = h * w;
    let kdim = ci * KK;
    let mut g_in = Tensor::zeros(input.shape());
    let mut g_w = Tensor::zeros(weights.shape());
    let mut g_b = vec![0.0f64; co];
    let mut col = vec![0.0f32; kdim * hw];
    let mut dcol = vec![0.0f32; kdim * hw];
    for s in 0..n {
        let g = grad_out.sample(s);
        for (o, row) in g.chunks_exact(hw).enumerate() {
            g_b[o] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
        im2col(input.sample(s), ci, h, w, &mut col);
        // dW += dOut (co x hw) * col^T (hw x kdim)
        gemm(
            co,
            hw,
            kdim,
            g,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            1.0,
            g_w.data_mut(),
        );
        if need_input_grad {
            // dcol = W^T (kdim x co) * dOut (co x hw)
            gemm(
                kdim,
                co,
                hw,
                weights.data(),
                (1, kdim as isize),
                g,
                (hw as isize, 1),
                0.0,
                &mut dcol,
            );
            let len = ci * hw;
            col2im_add(&dcol, ci, h, w, &mut g_in.data_mut()[s * len..(s + 1) * len]);
        }
    }
    let bias = Tensor::from_vec([1, co, 1, 1], g_b.into_iter().map(|v| v as f32).collect())
        .expect("bias gradient length");
    ConvGrads {
        input: g_in,
        weights: g_w,
        bias,
    }
}

fn check_dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<()> {
    if input.h() != 1 || input.w() != 1 {
        return Err(dim_err!(
            "dense: input must be 1x1 spatially, got {}x{}",
            input.h(),
            input.w()
        ));
    }
    let [co, ci, kh, kw] = weights.shape();
    if kh != 1 || kw != 1 {
        return Err(dim_err!("dense: weights must be [co, ci, 1, 1]"));
    }
    if input.c() != ci {
        return Err(dim_err!(
            "dense: input has {} features, weights expect {ci}",
            input.c()
        ));
    }
    check_bias(bias, co, "dense")
}

/// Fully connected layer on `[n, ci, 1, 1]` input with `[co, ci, 1, 1]` weights.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_dense(input, weights, bias)?;
    let n = input.n();
    let [co, ci, _, _] = weights.shape();
    let mut out = Tensor::zeros([n, co, 1, 1]);
    for s in 0..n {
        let x = input.sample(s);
        for o in 0..co {
            let row = &weights.data()[o * ci..(o + 1) * ci];
            let acc: f64 = row
                .iter()
                .zip(x)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>()
                + bias.data()[o] as f64;
            out.data_mut()[s * co + o] = acc as f32;
        }
    }
    Ok(out)
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = input.n();
    let [co, ci, _, _] = weights.shape();
    let mut g_in = vec![0.0f64; n * ci];
    let mut g_w = vec![0.0f64; co * ci];
    let mut g_b = vec![0.0f64; co];
    for s in 0..n {
        let x = input.sample(s);
        for o in 0..co {
            let g = grad_out.data()[s * co + o] as f64;
            g_b[o] += g;
            for i in 0..ci {
                g_w[o * ci + i] += g * x[i] as f64;
                g_in[s * ci + i] += g * weights.data()[o * ci + i] as f64;
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<_>>();
    (
        Tensor::from_vec(input.shape(), cast(g_in)).unwrap(),
        Tensor::from_vec(weights.shape(), cast(g_w)).unwrap(),
        Tensor::from_vec([1, co, 1, 1], cast(g_b)).unwrap(),
    )
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let hw = h * w;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for (dst, plane) in out.data_mut().iter_mut().zip(input.data().chunks_exact(hw)) {
        let sum: f64 = plane.iter().map(|&v| v as f64).sum();
        *dst = (sum / hw as f64) as f32;
    }
    out
}

/// Multiplies every position of channel `c` in sample `n` by `scale[n, c]`.
pub fn channel_scale(features: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = features.shape();
    if scale.shape() != [n, c, 1, 1] {
        return Err(dim_err!(
            "channel_scale: scale {:?} does not match features {:?}",
            scale.shape(),
            features.shape()
        ));
    }
    let mut out = features.clone();
    for (plane, &s) in out.data_mut().chunks_exact_mut(h * w).zip(scale.data()) {
        plane.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_same_shape(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(dim_err!(
            "concat_channels: {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        ));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Residual reconnection: `out = base`, then `out[:, indices[k]] += update[:, k]`.
///
/// With `indices = 0..c` this is `add`. With a strict subset it is the
/// "add the surviving channels, pass the rest through" merge of a pruned
/// residual block; channels keep their original positions.
pub fn index_add_channels(base: &Tensor, update: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let [n, c, h, w] = base.shape();
    if update.shape() != [n, indices.len(), h, w] {
        return Err(dim_err!(
            "index_add_channels: update {:?} incompatible with base {:?} and {} indices",
            update.shape(),
            base.shape(),
            indices.len()
        ));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j >= c) {
        return Err(dim_err!("index_add_channels: index {bad} >= {c} channels"));
    }
    let hw = h * w;
    let mut out = base.clone();
    for s in 0..n {
        for (k, &j) in indices.iter().enumerate() {
            let src = &update.data()[(s * indices.len() + k) * hw..][..hw];
            let dst = &mut out.data_mut()[(s * c + j) * hw..][..hw];
            dst.iter_mut().zip(src).for_each(|(d, u)| *d += u);
        }
    }
    Ok(out)
}

/// Mean absolute error over all elements.
pub fn mae_loss(prediction: &Tensor, target: &Tensor) -> Result<f32> {
    prediction.expect_same_shape(target, "mae_loss")?;
    if prediction.is_empty() {
        return Err(dim_err!("mae_loss: empty tensors"));
    }
    let sum: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs() as f64)
        .sum();
    Ok((sum / prediction.len() as f64) as f32)
}

/// Subgradient of the MAE with 0 chosen at ties.
pub(crate) fn mae_backward(prediction: &Tensor, target: &Tensor, upstream: f32) -> Tensor {
    let scale = upstream / prediction.len() as f32;
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(prediction.shape(), data).unwrap()
}
