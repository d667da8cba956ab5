//! Mean squared error plus structural similarity, with exact gradients.

use crate::error::Result;
use crate::image::Image;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn window_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (t, w) in taps.iter_mut().enumerate() {
        let d = t as f64 - half;
        *w = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= total);
    taps
}

/// Half-sample symmetric index: `-1 → 0`, `n → n-1`, periodic in `2n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable window: `G x` when `adjoint` is false, `Gᵀ x` otherwise.
fn blur(x: &[f64], n: usize, taps: &[f64; WINDOW], adjoint: bool) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for line in 0..n {
            let at = |k: usize| if along_rows { line * n + k } else { k * n + line };
            for i in 0..n {
                for (t, &w) in taps.iter().enumerate() {
                    let j = reflect(i as isize + t as isize - half, n);
                    if adjoint {
                        out[at(j)] += w * src[at(i)];
                    } else {
                        out[at(i)] += w * src[at(j)];
                    }
                }
            }
        }
        out
    };
    pass(&pass(x, true), false)
}

struct SsimMaps {
    value: f64,
    /// Per-pixel partials of the local SSIM with respect to `μ_a`, `E[ab]`
    /// and `E[a²]`.
    d_mu: Vec<f64>,
    d_ab: Vec<f64>,
    d_aa: Vec<f64>,
}

fn ssim_maps(a: &Image, b: &Image, range: f64, with_grad: bool) -> Result<SsimMaps> {
    a.check_same_size(b)?;
    let n = a.size();
    let taps = window_taps();
    let (pa, pb) = (a.pixels(), b.pixels());
    let mu_a = blur(pa, n, &taps, false);
    let mu_b = blur(pb, n, &taps, false);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let e_aa = blur(&sq(pa, pa), n, &taps, false);
    let e_bb = blur(&sq(pb, pb), n, &taps, false);
    let e_ab = blur(&sq(pa, pb), n, &taps, false);
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let count = (n * n) as f64;
    let mut total = 0.0;
    let cap = if with_grad { n * n } else { 0 };
    let (mut d_mu, mut d_ab, mut d_aa) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
    for i in 0..n * n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * (e_ab[i] - ma * mb) + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb) + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if with_grad {
            d_mu.push(s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2) / count);
            d_ab.push(s * 2.0 / a2 / count);
            d_aa.push(-s / b2 / count);
        }
    }
    Ok(SsimMaps {
        value: total / count,
        d_mu,
        d_ab,
        d_aa,
    })
}

fn target_range(target: &Image) -> f64 {
    let p = target.pixels();
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, symmetric borders) for
/// data range `range`.
pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    if !(range.is_finite() && range > 0.0) {
        return Err(crate::Error::InvalidParameter(format!("data range must be > 0, got {range}")));
    }
    Ok(ssim_maps(a, b, range, false)?.value)
}

/// SSIM with the data range taken from `b` (1 if `b` is constant).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_range(a, b, target_range(b))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let sum: f64 = a.pixels().iter().zip(b.pixels()).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(sum / a.pixels().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub mse: f64,
    pub ssim: f64,
}

/// `MSE + w_ssim · (1 − SSIM)` and its gradient with respect to `pred`.
pub fn loss(pred: &Image, target: &Image, w_ssim: f64) -> Result<(LossValue, Image)> {
    let err = mse(pred, target)?;
    let n = pred.size();
    let count = (n * n) as f64;
    let mut grad: Vec<f64> = pred
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(p, t)| 2.0 * (p - t) / count)
        .collect();
    let maps = ssim_maps(pred, target, target_range(target), w_ssim != 0.0)?;
    if w_ssim != 0.0 {
        let taps = window_taps();
        let g_mu = blur(&maps.d_mu, n, &taps, true);
        let g_ab = blur(&maps.d_ab, n, &taps, true);
        let g_aa = blur(&maps.d_aa, n, &taps, true);
        for (i, g) in grad.iter_mut().enumerate() {
            let ds = g_mu[i] + target.pixels()[i] * g_ab[i] + 2.0 * pred.pixels()[i] * g_aa[i];
            *g -= w_ssim * ds;
        }
    }
    let value = LossValue {
        value: err + w_ssim * (1.0 - maps.value),
        mse: err,
        ssim: maps.value,
    };
    Ok((value, pred.with_pixels(grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, 10.0, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn window_is_normalized_and_adjoint_is_exact() {
        assert!((window_taps().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let taps = window_taps();
        for n in [3, 7, 16] {
            let x = random_image(n, n as u64);
            let y = random_image(n, 100 + n as u64);
            let gx = blur(x.pixels(), n, &taps, false);
            let gty = blur(y.pixels(), n, &taps, true);
            let lhs: f64 = gx.iter().zip(y.pixels()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.pixels().iter().zip(&gty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(-6, 2), 1);
    }

    #[test]
    fn identical_images() {
        let x = random_image(16, 1);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let (l, g) = loss(&x, &x, 0.1).unwrap();
        assert!(l.value.abs() < 1e-12);
        assert!(g.pixels().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetric() {
        let a = random_image(16, 2);
        let b = random_image(16, 3);
        let r = 1.0;
        assert_eq!(ssim_with_range(&a, &b, r).unwrap(), ssim_with_range(&b, &a, r).unwrap());
    }

    #[test]
    fn constant_shift_closed_form() {
        let (mu, c, r) = (0.4, 0.2, 1.0);
        let a = Image::filled(16, 10.0, mu).unwrap();
        let b = Image::filled(16, 10.0, mu + c).unwrap();
        let c1 = (0.01 * r) * (0.01f64 * r);
        let expected = (2.0 * mu * (mu + c) + c1) / (mu * mu + (mu + c) * (mu + c) + c1);
        assert!((ssim_with_range(&a, &b, r).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pure_mse_closed_form() {
        let a = random_image(16, 4);
        let b = random_image(16, 5);
        let (l, g) = loss(&a, &b, 0.0).unwrap();
        assert!((l.value - mse(&a, &b).unwrap()).abs() < 1e-15);
        for ((gi, p), t) in g.pixels().iter().zip(a.pixels()).zip(b.pixels()) {
            assert!((gi - 2.0 * (p - t) / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(16, 6);
        let b = random_image(16, 7);
        let w = 0.5;
        let (_, g) = loss(&a, &b, w).unwrap();
        let h = 1e-6;
        for k in [0, 17, 100, 128, 255] {
            let mut p = a.pixels().to_vec();
            p[k] += h;
            let plus = loss(&a.with_pixels(p.clone()).unwrap(), &b, w).unwrap().0.value;
            p[k] -= 2.0 * h;
            let minus = loss(&a.with_pixels(p).unwrap(), &b, w).unwrap().0.value;
            let fd = (plus - minus) / (2.0 * h);
            let an = g.pixels()[k];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()), "pixel {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn size_mismatch() {
        assert!(loss(&random_image(8, 1), &random_image(16, 2), 0.1).is_err());
        assert!(ssim(&random_image(8, 1), &random_image(16, 2)).is_err());
    }
}
