//! 3×3 convolution kernels over channel-major `C × (N+2) × (N+2)` padded
//! buffers.
//!
//! Every kernel evaluates the same sums in the same order regardless of the
//! SIMD path taken, so results are bitwise reproducible across machines.

pub(crate) const K: usize = 3;
const LANES: usize = 8;

/// Half-sample symmetric padding by one pixel: `x[-1] = x[0]`, `x[N] = x[N-1]`.
pub(crate) fn pad(channels: usize, n: usize, src: &[f64], dst: &mut Vec<f64>) {
    pad_map(channels, n, src, dst, |v| v)
}

/// [`pad`] of the rectified input, `max(x, 0)` with `max(0, 0) = 0`.
pub(crate) fn pad_relu(channels: usize, n: usize, src: &[f64], dst: &mut Vec<f64>) {
    pad_map(channels, n, src, dst, relu)
}

#[inline(always)]
pub(crate) fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[inline(always)]
fn pad_map(channels: usize, n: usize, src: &[f64], dst: &mut Vec<f64>, f: impl Fn(f64) -> f64) {
    let p = n + 2;
    // every element is overwritten below
    dst.resize(channels * p * p, 0.0);
    for c in 0..channels {
        let s = &src[c * n * n..(c + 1) * n * n];
        let d = &mut dst[c * p * p..(c + 1) * p * p];
        for r in 0..p {
            let sr = r.saturating_sub(1).min(n - 1);
            let row = &s[sr * n..(sr + 1) * n];
            let out = &mut d[r * p..(r + 1) * p];
            for (o, &v) in out[1..=n].iter_mut().zip(row) {
                *o = f(v);
            }
            out[0] = out[1];
            out[n + 1] = out[n];
        }
    }
}

/// Adjoint of [`pad`]: folds border gradients back onto the pixels they copied.
pub(crate) fn unpad_adjoint(channels: usize, n: usize, src: &[f64], dst: &mut [f64]) {
    let p = n + 2;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..channels {
        let s = &src[c * p * p..(c + 1) * p * p];
        let d = &mut dst[c * n * n..(c + 1) * n * n];
        for r in 0..p {
            let dr = r.saturating_sub(1).min(n - 1);
            let row = &s[r * p..(r + 1) * p];
            let out = &mut d[dr * n..(dr + 1) * n];
            for (o, v) in out.iter_mut().zip(&row[1..=n]) {
                *o += v;
            }
            out[0] += row[0];
            out[n - 1] += row[n + 1];
        }
    }
}

macro_rules! dispatch {
    ($generic:ident, $avx:ident, ($($arg:expr),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports the features enabled on the callee.
                return unsafe { $avx($($arg),*) };
            }
        }
        $generic($($arg),*)
    }};
}

/// `out[o] = bias[o] + Σ_i w[o,i] ⋆ input[i]` over the valid region of the
/// padded input. `weights` is laid out `[out][in][ky][kx]`.
pub(crate) fn conv_forward(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports the features enabled on the callee.
            return unsafe { conv_forward_avx512(input, in_ch, n, weights, bias, out_ch, out) };
        }
    }
    dispatch!(conv_forward_generic, conv_forward_avx2, (input, in_ch, n, weights, bias, out_ch, out))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn conv_forward_avx2(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    const OB: usize = 4;
    let p = n + 2;
    let full = n / LANES * LANES;
    assert!(input.len() >= in_ch * p * p && out.len() >= out_ch * n * n);
    let mut o0 = 0;
    while o0 + OB <= out_ch {
        let w = reorder::<OB>(weights, in_ch, o0);
        for y in 0..n {
            let mut x = 0;
            while x < full {
                let (mut a0, mut a1, mut a2, mut a3, mut a4, mut a5, mut a6, mut a7);
                a0 = _mm256_set1_pd(bias[o0]);
                a1 = a0;
                a2 = _mm256_set1_pd(bias[o0 + 1]);
                a3 = a2;
                a4 = _mm256_set1_pd(bias[o0 + 2]);
                a5 = a4;
                a6 = _mm256_set1_pd(bias[o0 + 3]);
                a7 = a6;
                for i in 0..in_ch {
                    // SAFETY: y + ky < p and x + kx + LANES <= n + 2 = p, checked by the assert above
                    let base = input.as_ptr().add(i * p * p + y * p + x);
                    let wp = w.as_ptr().add(i * K * K * OB);
                    for t in 0..K * K {
                        let src = base.add((t / K) * p + t % K);
                        let s0 = _mm256_loadu_pd(src);
                        let s1 = _mm256_loadu_pd(src.add(4));
                        let wt = wp.add(t * OB);
                        let w0 = _mm256_broadcast_sd(&*wt);
                        a0 = _mm256_add_pd(a0, _mm256_mul_pd(w0, s0));
                        a1 = _mm256_add_pd(a1, _mm256_mul_pd(w0, s1));
                        let w1 = _mm256_broadcast_sd(&*wt.add(1));
                        a2 = _mm256_add_pd(a2, _mm256_mul_pd(w1, s0));
                        a3 = _mm256_add_pd(a3, _mm256_mul_pd(w1, s1));
                        let w2 = _mm256_broadcast_sd(&*wt.add(2));
                        a4 = _mm256_add_pd(a4, _mm256_mul_pd(w2, s0));
                        a5 = _mm256_add_pd(a5, _mm256_mul_pd(w2, s1));
                        let w3 = _mm256_broadcast_sd(&*wt.add(3));
                        a6 = _mm256_add_pd(a6, _mm256_mul_pd(w3, s0));
                        a7 = _mm256_add_pd(a7, _mm256_mul_pd(w3, s1));
                    }
                }
                let dst = out.as_mut_ptr().add(o0 * n * n + y * n + x);
                let plane = n * n;
                _mm256_storeu_pd(dst, a0);
                _mm256_storeu_pd(dst.add(4), a1);
                _mm256_storeu_pd(dst.add(plane), a2);
                _mm256_storeu_pd(dst.add(plane + 4), a3);
                _mm256_storeu_pd(dst.add(2 * plane), a4);
                _mm256_storeu_pd(dst.add(2 * plane + 4), a5);
                _mm256_storeu_pd(dst.add(3 * plane), a6);
                _mm256_storeu_pd(dst.add(3 * plane + 4), a7);
                x += LANES;
            }
            scalar_columns::<OB>(input, in_ch, n, &w, bias, o0, y, full, out);
        }
        o0 += OB;
    }
    while o0 < out_ch {
        conv_block::<1>(input, in_ch, n, weights, bias, o0, out);
        o0 += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn conv_forward_avx512(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    assert!(input.len() >= in_ch * (n + 2) * (n + 2) && out.len() >= out_ch * n * n);
    let mut o0 = 0;
    while o0 + 8 <= out_ch {
        tile_avx512::<8, 2>(input, in_ch, n, weights, bias, o0, out);
        o0 += 8;
    }
    while o0 < out_ch {
        tile_avx512::<1, 4>(input, in_ch, n, weights, bias, o0, out);
        o0 += 1;
    }
}

/// `OB` output channels by `V` vectors of 8 columns.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tile_avx512<const OB: usize, const V: usize>(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    o0: usize,
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    let p = n + 2;
    let width = 8 * V;
    let full = n / width * width;
    let w = reorder::<OB>(weights, in_ch, o0);
    for y in 0..n {
        let mut x = 0;
        while x < full {
            let mut acc = [[_mm512_setzero_pd(); V]; OB];
            for (ob, a) in acc.iter_mut().enumerate() {
                *a = [_mm512_set1_pd(bias[o0 + ob]); V];
            }
            for i in 0..in_ch {
                // SAFETY: rows y..y+2 and columns x..x+width+1 lie inside the
                // padded plane, checked by the caller's assert
                let base = input.as_ptr().add(i * p * p + y * p + x);
                let wp = w.as_ptr().add(i * K * K * OB);
                for t in 0..K * K {
                    let src = base.add((t / K) * p + t % K);
                    let mut sv = [_mm512_setzero_pd(); V];
                    for (v, s) in sv.iter_mut().enumerate() {
                        *s = _mm512_loadu_pd(src.add(8 * v));
                    }
                    let wt = wp.add(t * OB);
                    for (ob, a) in acc.iter_mut().enumerate() {
                        let wv = _mm512_set1_pd(*wt.add(ob));
                        for v in 0..V {
                            a[v] = _mm512_add_pd(a[v], _mm512_mul_pd(wv, sv[v]));
                        }
                    }
                }
            }
            for (ob, a) in acc.iter().enumerate() {
                let dst = out.as_mut_ptr().add((o0 + ob) * n * n + y * n + x);
                for (v, r) in a.iter().enumerate() {
                    _mm512_storeu_pd(dst.add(8 * v), *r);
                }
            }
            x += width;
        }
        scalar_columns::<OB>(input, in_ch, n, &w, bias, o0, y, full, out);
    }
}

fn conv_forward_generic(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    conv_forward_body(input, in_ch, n, weights, bias, out_ch, out)
}

#[inline(always)]
fn conv_forward_body(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    let mut o = 0;
    while o + 4 <= out_ch {
        conv_block::<4>(input, in_ch, n, weights, bias, o, out);
        o += 4;
    }
    while o < out_ch {
        conv_block::<1>(input, in_ch, n, weights, bias, o, out);
        o += 1;
    }
}

/// Weights of outputs `o0 .. o0+OB` laid out `[in][ky][kx][ob]`.
fn reorder<const OB: usize>(weights: &[f64], in_ch: usize, o0: usize) -> Vec<f64> {
    let taps = in_ch * K * K;
    let mut w = vec![0.0; taps * OB];
    for ob in 0..OB {
        for t in 0..taps {
            w[t * OB + ob] = weights[(o0 + ob) * taps + t];
        }
    }
    w
}

/// Scalar evaluation of row `y`, columns `from..n`, in the same summation
/// order as the vector paths.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn scalar_columns<const OB: usize>(
    input: &[f64],
    in_ch: usize,
    n: usize,
    w: &[f64],
    bias: &[f64],
    o0: usize,
    y: usize,
    from: usize,
    out: &mut [f64],
) {
    let p = n + 2;
    for x in from..n {
        for ob in 0..OB {
            let mut acc = bias[o0 + ob];
            for i in 0..in_ch {
                let plane = &input[i * p * p..(i + 1) * p * p];
                for ky in 0..K {
                    for kx in 0..K {
                        acc += w[((i * K + ky) * K + kx) * OB + ob] * plane[(y + ky) * p + x + kx];
                    }
                }
            }
            out[(o0 + ob) * n * n + y * n + x] = acc;
        }
    }
}

#[inline(always)]
fn conv_block<const OB: usize>(
    input: &[f64],
    in_ch: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    o0: usize,
    out: &mut [f64],
) {
    let p = n + 2;
    let w = reorder::<OB>(weights, in_ch, o0);
    let full = n / LANES * LANES;
    for y in 0..n {
        let mut x = 0;
        while x < full {
            let mut acc = [[0.0f64; LANES]; OB];
            for (ob, a) in acc.iter_mut().enumerate() {
                *a = [bias[o0 + ob]; LANES];
            }
            for i in 0..in_ch {
                let plane = &input[i * p * p..(i + 1) * p * p];
                for ky in 0..K {
                    let row = &plane[(y + ky) * p + x..(y + ky) * p + x + LANES + K - 1];
                    for kx in 0..K {
                        let src: &[f64; LANES] = row[kx..kx + LANES].try_into().unwrap();
                        let wt: &[f64; OB] = w[((i * K + ky) * K + kx) * OB..][..OB].try_into().unwrap();
                        for ob in 0..OB {
                            for t in 0..LANES {
                                acc[ob][t] += wt[ob] * src[t];
                            }
                        }
                    }
                }
            }
            for (ob, a) in acc.iter().enumerate() {
                out[(o0 + ob) * n * n + y * n + x..][..LANES].copy_from_slice(a);
            }
            x += LANES;
        }
        scalar_columns::<OB>(input, in_ch, n, &w, bias, o0, y, full, out);
    }
}

/// Weight gradient `gw[o,i,ky,kx] = Σ_{y,x} g[o,y,x] · input[i, y+ky, x+kx]`.
pub(crate) fn conv_weight_grad(input: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gw: &mut [f64]) {
    dispatch!(conv_weight_grad_generic, conv_weight_grad_avx2, (input, in_ch, n, grad_out, out_ch, gw))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn conv_weight_grad_avx2(input: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gw: &mut [f64]) {
    conv_weight_grad_body(input, in_ch, n, grad_out, out_ch, gw)
}

fn conv_weight_grad_generic(input: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gw: &mut [f64]) {
    conv_weight_grad_body(input, in_ch, n, grad_out, out_ch, gw)
}

#[inline(always)]
fn conv_weight_grad_body(input: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gw: &mut [f64]) {
    let p = n + 2;
    let full = n / LANES * LANES;
    for o in 0..out_ch {
        let g = &grad_out[o * n * n..(o + 1) * n * n];
        for i in 0..in_ch {
            let plane = &input[i * p * p..(i + 1) * p * p];
            for ky in 0..K {
                for kx in 0..K {
                    let mut lanes = [0.0f64; LANES];
                    let mut tail = 0.0;
                    for y in 0..n {
                        let grow = &g[y * n..(y + 1) * n];
                        let irow = &plane[(y + ky) * p + kx..(y + ky) * p + kx + n];
                        for (gc, ic) in grow[..full].chunks_exact(LANES).zip(irow[..full].chunks_exact(LANES)) {
                            for t in 0..LANES {
                                lanes[t] += gc[t] * ic[t];
                            }
                        }
                        for x in full..n {
                            tail += grow[x] * irow[x];
                        }
                    }
                    gw[((o * in_ch + i) * K + ky) * K + kx] += lanes.iter().sum::<f64>() + tail;
                }
            }
        }
    }
}

/// Input gradient on the padded grid:
/// `gin[i, y+ky, x+kx] += Σ_o w[o,i,ky,kx] · g[o,y,x]`.
pub(crate) fn conv_input_grad(weights: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gin: &mut [f64]) {
    dispatch!(conv_input_grad_generic, conv_input_grad_avx2, (weights, in_ch, n, grad_out, out_ch, gin))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn conv_input_grad_avx2(weights: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gin: &mut [f64]) {
    conv_input_grad_body(weights, in_ch, n, grad_out, out_ch, gin)
}

fn conv_input_grad_generic(weights: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gin: &mut [f64]) {
    conv_input_grad_body(weights, in_ch, n, grad_out, out_ch, gin)
}

#[inline(always)]
fn conv_input_grad_body(weights: &[f64], in_ch: usize, n: usize, grad_out: &[f64], out_ch: usize, gin: &mut [f64]) {
    let p = n + 2;
    gin.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..in_ch {
        let plane = &mut gin[i * p * p..(i + 1) * p * p];
        for o in 0..out_ch {
            let g = &grad_out[o * n * n..(o + 1) * n * n];
            for ky in 0..K {
                for kx in 0..K {
                    let w = weights[((o * in_ch + i) * K + ky) * K + kx];
                    for y in 0..n {
                        let dst = &mut plane[(y + ky) * p + kx..(y + ky) * p + kx + n];
                        for (d, s) in dst.iter_mut().zip(&g[y * n..(y + 1) * n]) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}
