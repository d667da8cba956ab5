//! Kernel- and DFOV-dependent noise texture.
//!
//! The noise power spectrum is `NPS(f) ∝ f^r · M(f)²` with `f` in lp/cm, so
//! the same kernel produces finer speckle (in pixels) at larger DFOV. White
//! Gaussian fields come from a ChaCha8 generator seeded with
//! `seed_from_u64(seed)` on a numbered stream, sampled with the ziggurat
//! standard normal of `rand_distr`, in row-major order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{fft2, ifft2, FrequencyGrid, Image};
use crate::mtf::KernelMtfProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Spatial standard deviation produced by `shaping_profile`.
    pub sigma: f64,
    pub shaping_profile: KernelMtfProfile,
    #[serde(default = "default_ramp")]
    pub ramp_exponent: f64,
}

fn default_ramp() -> f64 {
    1.0
}

impl NoiseModel {
    pub fn new(sigma: f64, shaping_profile: KernelMtfProfile, ramp_exponent: f64) -> Result<Self> {
        let model = Self {
            sigma,
            shaping_profile,
            ramp_exponent,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.ramp_exponent.is_finite() && self.ramp_exponent >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ramp exponent must be >= 0, got {}",
                self.ramp_exponent
            )));
        }
        self.shaping_profile.validate()
    }

    /// Unnormalized `f^r M(f)²` on every grid bin, with the DC bin zeroed.
    pub fn power_spectrum(&self, grid: FrequencyGrid, kernel: &KernelMtfProfile) -> Vec<f64> {
        let mut nps: Vec<f64> = grid
            .radial_frequencies()
            .into_iter()
            .map(|f| {
                let m = kernel.eval(f).unwrap_or(0.0);
                f.powf(self.ramp_exponent) * m * m
            })
            .collect();
        nps[0] = 0.0;
        nps
    }
}

pub(crate) fn white_noise(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn shape(white: &Image, nps: &[f64]) -> Result<Image> {
    let mut spec = fft2(white);
    for (c, p) in spec.data_mut().iter_mut().zip(nps) {
        *c *= p.sqrt();
    }
    ifft2(&spec, white.dfov_cm())
}

/// Zero-mean noise whose spatial standard deviation is exactly `model.sigma`.
pub fn shaped_noise(grid: FrequencyGrid, model: &NoiseModel, seed: u64) -> Result<Image> {
    kernel_noise(grid, model, &model.shaping_profile, seed, 0)
}

/// Noise for an image reconstructed with `kernel`, drawn from the white
/// field of `(seed, stream)`.
///
/// The scale is fixed by the model's own kernel: the same white field
/// shaped by `model.shaping_profile` would have standard deviation
/// `model.sigma`. A sharper `kernel` therefore yields proportionally more
/// noise, as it passes more of the underlying ramp-filtered spectrum.
pub fn kernel_noise(
    grid: FrequencyGrid,
    model: &NoiseModel,
    kernel: &KernelMtfProfile,
    seed: u64,
    stream: u64,
) -> Result<Image> {
    model.validate()?;
    let n = grid.size();
    if model.sigma == 0.0 {
        return Image::zeros(n, grid.dfov_cm());
    }
    let white = Image::new(n, grid.dfov_cm(), white_noise(n, seed, stream))?;
    let reference_nps = model.power_spectrum(grid, &model.shaping_profile);
    let reference = shape(&white, &reference_nps)?;
    let reference_std = reference.std();
    if reference_std == 0.0 {
        return Image::zeros(n, grid.dfov_cm());
    }
    let field = if *kernel == model.shaping_profile {
        reference
    } else {
        shape(&white, &model.power_spectrum(grid, kernel))?
    };
    field.scaled(model.sigma / reference_std)
}

/// Average of `|F x|²` over a set of equally sized images.
pub fn mean_periodogram(images: &[Image]) -> Result<Vec<f64>> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let mut acc = vec![0.0; first.size() * first.size()];
    for img in images {
        first.check_same_size(img)?;
        for (a, c) in acc.iter_mut().zip(fft2(img).data()) {
            *a += c.norm_sqr();
        }
    }
    let count = images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Full width at half maximum, in pixels, of the horizontal cut through the
/// autocorrelation whose power spectrum is `periodogram` (N×N, DFT order).
///
/// The cut is evaluated as a trigonometric series, i.e. band-limited
/// interpolation, at 1/64-pixel steps so sub-pixel widths are resolved.
pub fn autocorrelation_fwhm_px(periodogram: &[f64], n: usize) -> Result<f64> {
    if n == 0 || periodogram.len() != n * n {
        return Err(Error::ShapeMismatch("periodogram must be N×N".into()));
    }
    let grid = FrequencyGrid::new(n, 1.0)?;
    // marginal over rows: the lag-(0, t) autocorrelation only sees column frequency
    let mut marginal = vec![0.0; n];
    for u in 0..n {
        for v in 0..n {
            marginal[v] += periodogram[u * n + v];
        }
    }
    let acf = |t: f64| -> f64 {
        marginal
            .iter()
            .enumerate()
            .map(|(v, &q)| q * (std::f64::consts::TAU * grid.signed_index(v) * t / n as f64).cos())
            .sum()
    };
    let peak = acf(0.0);
    if peak <= 0.0 {
        return Err(Error::InvalidParameter("periodogram has no power".into()));
    }
    let half = 0.5 * peak;
    let step = 1.0 / 64.0;
    let mut prev_t = 0.0;
    let mut prev = peak;
    let mut t = step;
    while t <= n as f64 / 2.0 {
        let cur = acf(t);
        if cur <= half {
            let crossing = prev_t + (prev - half) / (prev - cur) * (t - prev_t);
            return Ok(2.0 * crossing);
        }
        prev_t = t;
        prev = cur;
        t += step;
    }
    Err(Error::InvalidParameter("autocorrelation never drops to half maximum".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(sigma: f64) -> NoiseModel {
        NoiseModel::new(sigma, KernelMtfProfile::default_input(), 1.0).unwrap()
    }

    #[test]
    fn zero_sigma_gives_zero_image() {
        let g = FrequencyGrid::new(32, 10.0).unwrap();
        let img = shaped_noise(g, &model(0.0), 3).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn std_is_exact_and_mean_is_small() {
        let g = FrequencyGrid::new(64, 10.0).unwrap();
        let sigma = 2.5;
        for seed in 0..10 {
            let img = shaped_noise(g, &model(sigma), seed).unwrap();
            assert!((img.std() - sigma).abs() < 1e-12);
            assert!(img.mean().abs() < 3.0 * sigma / 64.0);
        }
    }

    #[test]
    fn deterministic_per_seed_and_stream() {
        let g = FrequencyGrid::new(32, 10.0).unwrap();
        let m = model(1.0);
        let k = KernelMtfProfile::default_target();
        assert_eq!(kernel_noise(g, &m, &k, 5, 1).unwrap(), kernel_noise(g, &m, &k, 5, 1).unwrap());
        assert_ne!(kernel_noise(g, &m, &k, 5, 1).unwrap(), kernel_noise(g, &m, &k, 5, 2).unwrap());
    }

    #[test]
    fn sharper_kernel_passes_more_noise() {
        let g = FrequencyGrid::new(64, 10.0).unwrap();
        let m = model(1.0);
        let sharp = kernel_noise(g, &m, &KernelMtfProfile::default_target(), 1, 0).unwrap();
        let smooth = kernel_noise(g, &m, &KernelMtfProfile::default_input(), 1, 0).unwrap();
        assert!((smooth.std() - 1.0).abs() < 1e-12);
        assert!(sharp.std() > smooth.std());
    }

    #[test]
    fn periodogram_matches_target_shape_on_mid_band() {
        let n = 64;
        let g = FrequencyGrid::new(n, 10.0).unwrap();
        let m = model(1.0);
        let images: Vec<Image> = (0..100).map(|s| shaped_noise(g, &m, s).unwrap()).collect();
        let measured = mean_periodogram(&images).unwrap();
        let target = m.power_spectrum(g, &m.shaping_profile);
        // scale the target so both have the same total power
        let scale = measured.iter().sum::<f64>() / target.iter().sum::<f64>();
        let freqs = g.radial_frequencies();
        let nyq = g.nyquist();
        // radial rings of one frequency step on the mid band [0.2, 0.6] Nyquist
        let step = 1.0 / g.dfov_cm();
        let mut errs = Vec::new();
        let mut ring = 0.2 * nyq;
        while ring < 0.6 * nyq {
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..n * n {
                if freqs[i] >= ring && freqs[i] < ring + step {
                    a += measured[i];
                    b += scale * target[i];
                }
            }
            if b > 0.0 {
                errs.push((a - b) / b);
            }
            ring += step;
        }
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(rmse < 0.1, "relative RMSE {rmse}");
    }

    #[test]
    fn speckle_is_finer_in_pixels_at_larger_dfov() {
        let n = 128;
        let m = model(1.0);
        let width = |dfov: f64| {
            let g = FrequencyGrid::new(n, dfov).unwrap();
            let images: Vec<Image> = (0..20).map(|s| shaped_noise(g, &m, s).unwrap()).collect();
            autocorrelation_fwhm_px(&mean_periodogram(&images).unwrap(), n).unwrap()
        };
        assert!(width(20.0) < width(5.0));
    }

    #[test]
    fn fwhm_of_known_gaussian_spectrum() {
        // Gaussian ACF exp(-t²/(2s²)) has FWHM 2 s sqrt(2 ln 2)
        let n = 64;
        let s = 3.0;
        let g = FrequencyGrid::new(n, 1.0).unwrap();
        let mut p = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let fu = g.signed_index(u) / n as f64;
                let fv = g.signed_index(v) / n as f64;
                p[u * n + v] = (-2.0 * (std::f64::consts::PI * s).powi(2) * (fu * fu + fv * fv)).exp();
            }
        }
        let fwhm = autocorrelation_fwhm_px(&p, n).unwrap();
        let expected = 2.0 * s * (2.0 * 2f64.ln()).sqrt();
        assert!((fwhm - expected).abs() < 1e-3, "{fwhm} vs {expected}");
    }
}
