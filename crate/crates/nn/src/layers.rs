//! Per-layer forward and backward kernels over sample-major batches.

use crate::scalar::{Scalar, Strides};
use crate::spec::Activation;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

// ---------------------------------------------------------------- dense

/// `y[b, o] = sum_i x[b, i] * w[o, i] + bias[o]`
pub(crate) fn dense_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    T::gemm(
        batch,
        inputs,
        outputs,
        x,
        Strides::row_major(inputs),
        w,
        Strides::transposed(inputs),
        &mut y,
        Strides::row_major(outputs),
        true,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[T],
    dw: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    // dw[o, i] += sum_b dy[b, o] x[b, i]
    T::gemm(
        outputs,
        batch,
        inputs,
        dy,
        Strides::transposed(outputs),
        x,
        Strides::row_major(inputs),
        dw,
        Strides::row_major(inputs),
        true,
    );
    for row in dy.chunks_exact(outputs) {
        for (d, &g) in dbias.iter_mut().zip(row) {
            *d += g;
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![T::zero(); batch * inputs];
    T::gemm(
        batch,
        outputs,
        inputs,
        dy,
        Strides::row_major(outputs),
        w,
        Strides::row_major(inputs),
        &mut dx,
        Strides::row_major(inputs),
        false,
    );
    Some(dx)
}

// ---------------------------------------------------------------- conv 3x3

/// Unfolds one `[c, h, w]` sample into `[c * 9, h * w]` patches (zero padding 1).
fn im2col<T: Scalar>(x: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], channels: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    d: ConvDims,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let hw = d.h * d.w;
    let k = d.in_channels * 9;
    let in_len = d.in_channels * hw;
    let out_len = d.out_channels * hw;
    let mut cols = vec![T::zero(); k * hw];
    let mut y = vec![T::zero(); batch * out_len];
    for b in 0..batch {
        im2col(&x[b * in_len..(b + 1) * in_len], d.in_channels, d.h, d.w, &mut cols);
        let out = &mut y[b * out_len..(b + 1) * out_len];
        for (plane, &bv) in out.chunks_exact_mut(hw).zip(bias) {
            plane.fill(bv);
        }
        T::gemm(
            d.out_channels,
            k,
            hw,
            weight,
            Strides::row_major(k),
            &cols,
            Strides::row_major(hw),
            out,
            Strides::row_major(hw),
            true,
        );
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    d: ConvDims,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let hw = d.h * d.w;
    let k = d.in_channels * 9;
    let in_len = d.in_channels * hw;
    let out_len = d.out_channels * hw;
    let mut cols = vec![T::zero(); k * hw];
    let mut dcols = vec![T::zero(); k * hw];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * in_len]);
    for b in 0..batch {
        let dy_b = &dy[b * out_len..(b + 1) * out_len];
        for (plane, db) in dy_b.chunks_exact(hw).zip(dbias.iter_mut()) {
            *db += plane.iter().copied().sum::<T>();
        }
        im2col(&x[b * in_len..(b + 1) * in_len], d.in_channels, d.h, d.w, &mut cols);
        // dweight[o, q] += sum_p dy[o, p] cols[q, p]
        T::gemm(
            d.out_channels,
            hw,
            k,
            dy_b,
            Strides::row_major(hw),
            &cols,
            Strides::transposed(hw),
            dweight,
            Strides::row_major(k),
            true,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols[q, p] = sum_o weight[o, q] dy[o, p]
            T::gemm(
                k,
                d.out_channels,
                hw,
                weight,
                Strides::transposed(k),
                dy_b,
                Strides::row_major(hw),
                &mut dcols,
                Strides::row_major(hw),
                false,
            );
            col2im(&dcols, d.in_channels, d.h, d.w, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    dx
}

// ---------------------------------------------------------------- batch norm

/// Values kept from a train-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch statistics per feature over `[batch, features, spatial]`.
pub(crate) fn bn_forward_train<T: Scalar>(
    x: &[T],
    batch: usize,
    features: usize,
    spatial: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, BnCache<T>) {
    let count = (batch * spatial) as f64;
    let eps = T::from_f64_lossy(BN_EPS);
    let mut mean = vec![T::zero(); features];
    let mut var = vec![T::zero(); features];
    for f in 0..features {
        // Accumulate in f64 so the batch statistics are not order-sensitive at f32.
        let mut s = 0.0f64;
        for b in 0..batch {
            let base = (b * features + f) * spatial;
            s += x[base..base + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0f64;
        for b in 0..batch {
            let base = (b * features + f) * spatial;
            ss += x[base..base + spatial]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[f] = T::from_f64_lossy(m);
        var[f] = T::from_f64_lossy(ss / count);
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for f in 0..features {
            let base = (b * features + f) * spatial;
            let (m, is, g, bt) = (mean[f], inv_std[f], gamma[f], beta[f]);
            for i in base..base + spatial {
                let h = (x[i] - m) * is;
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward_eval<T: Scalar>(
    x: &[T],
    batch: usize,
    features: usize,
    spatial: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Vec<T> {
    let eps = T::from_f64_lossy(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for f in 0..features {
            let scale = gamma[f] / (running_var[f] + eps).sqrt();
            let shift = beta[f] - running_mean[f] * scale;
            let base = (b * features + f) * spatial;
            for i in base..base + spatial {
                y[i] = x[i] * scale + shift;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward<T: Scalar>(
    dy: &[T],
    cache: &BnCache<T>,
    batch: usize,
    features: usize,
    spatial: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let count = T::from_usize(batch * spatial).expect("count fits");
    let mut sum_dy = vec![T::zero(); features];
    let mut sum_dy_xhat = vec![T::zero(); features];
    for b in 0..batch {
        for f in 0..features {
            let base = (b * features + f) * spatial;
            let mut s = T::zero();
            let mut sx = T::zero();
            for i in base..base + spatial {
                s += dy[i];
                sx += dy[i] * cache.xhat[i];
            }
            sum_dy[f] += s;
            sum_dy_xhat[f] += sx;
        }
    }
    for f in 0..features {
        dgamma[f] += sum_dy_xhat[f];
        dbeta[f] += sum_dy[f];
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..batch {
        for f in 0..features {
            let k = gamma[f] * cache.inv_std[f] / count;
            let base = (b * features + f) * spatial;
            for i in base..base + spatial {
                dx[i] = k * (count * dy[i] - sum_dy[f] - cache.xhat[i] * sum_dy_xhat[f]);
            }
        }
    }
    Some(dx)
}

// ---------------------------------------------------------------- activations

pub(crate) fn activation_forward<T: Scalar>(act: Activation, x: &[T], sample_len: usize) -> Vec<T> {
    match act {
        Activation::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
        Activation::LeakyRelu(slope) => {
            let s = T::from_f64_lossy(slope);
            x.iter()
                .map(|&v| if v > T::zero() { v } else { v * s })
                .collect()
        }
        Activation::Sigmoid => x
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect(),
        Activation::Softmax => {
            let mut y = Vec::with_capacity(x.len());
            for row in x.chunks_exact(sample_len) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let start = y.len();
                y.extend(row.iter().map(|&v| (v - max).exp()));
                let total: T = y[start..].iter().copied().sum();
                for v in &mut y[start..] {
                    *v /= total;
                }
            }
            y
        }
    }
}

/// Gradient through an activation given its cached output.
pub(crate) fn activation_backward<T: Scalar>(
    act: Activation,
    y: &[T],
    dy: &[T],
    sample_len: usize,
) -> Vec<T> {
    match act {
        Activation::Relu => y
            .iter()
            .zip(dy)
            .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::LeakyRelu(slope) => {
            let s = T::from_f64_lossy(slope);
            y.iter()
                .zip(dy)
                .map(|(&o, &g)| if o > T::zero() { g } else { g * s })
                .collect()
        }
        Activation::Sigmoid => y
            .iter()
            .zip(dy)
            .map(|(&o, &g)| g * o * (T::one() - o))
            .collect(),
        Activation::Softmax => {
            let mut dx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks_exact(sample_len).zip(dy.chunks_exact(sample_len)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
            }
            dx
        }
    }
}
