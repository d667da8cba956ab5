//! Square real images, their spectra and the DFOV-aware frequency grid.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A square real-valued slice tagged with its display field-of-view.
///
/// Pixels are stored row-major as `f64`. The pixel spacing is always derived
/// as `dfov_cm / size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    dfov_cm: f64,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(size: usize, dfov_cm: f64, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidImage("size must be positive".into()));
        }
        validate_dfov(dfov_cm)?;
        if pixels.len() != size * size {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for a {size}x{size} image, got {}",
                size * size,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "pixel ({}, {}) is not finite",
                i / size,
                i % size
            )));
        }
        Ok(Self {
            size,
            dfov_cm,
            pixels,
        })
    }

    pub fn zeros(size: usize, dfov_cm: f64) -> Result<Self> {
        Self::new(size, dfov_cm, vec![0.0; size * size])
    }

    pub fn filled(size: usize, dfov_cm: f64, value: f64) -> Result<Self> {
        Self::new(size, dfov_cm, vec![value; size * size])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(size: usize, dfov_cm: f64, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                pixels.push(f(row, col));
            }
        }
        Self::new(size, dfov_cm, pixels)
    }

    /// Same geometry as `self`, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.size, self.dfov_cm, pixels)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dfov_cm(&self) -> f64 {
        self.dfov_cm
    }

    pub fn pixel_spacing_cm(&self) -> f64 {
        self.dfov_cm / self.size as f64
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid {
            size: self.size,
            dfov_cm: self.dfov_cm,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_pixels(self.pixels.iter().map(|&p| f(p)).collect())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.map(|p| p * factor)
    }

    /// `self + factor * other`, pixelwise.
    pub fn add_scaled(&self, other: &Image, factor: f64) -> Result<Self> {
        self.check_same_size(other)?;
        self.with_pixels(
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a + factor * b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.pixels.len() as f64
    }

    /// Population standard deviation over all pixels.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / self.pixels.len() as f64;
        var.sqrt()
    }

    /// `||self - reference|| / ||reference||`; falls back to the absolute
    /// distance when the reference is identically zero.
    pub fn relative_l2(&self, reference: &Image) -> f64 {
        let diff: f64 = self
            .pixels
            .iter()
            .zip(&reference.pixels)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = reference.l2_norm();
        if norm > 0.0 {
            diff / norm
        } else {
            diff
        }
    }

    pub(crate) fn check_same_size(&self, other: &Image) -> Result<()> {
        if self.size != other.size {
            return Err(Error::SizeMismatch {
                expected: self.size,
                actual: other.size,
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_dfov(dfov_cm: f64) -> Result<()> {
    if !(dfov_cm.is_finite() && dfov_cm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dfov_cm must be positive and finite, got {dfov_cm}"
        )));
    }
    Ok(())
}

/// Complex N×N spectrum in DFT index order (DC at `(0, 0)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    size: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(size: usize, data: Vec<Complex64>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "spectrum of size {size} needs {} bins, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![Complex64::new(0.0, 0.0); size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.size + v]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest deviation from conjugate symmetry `S[u,v] = conj(S[-u,-v])`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.size;
        let mut worst: f64 = 0.0;
        for u in 0..n {
            for v in 0..n {
                let mirror = self.get((n - u) % n, (n - v) % n).conj();
                worst = worst.max((self.get(u, v) - mirror).norm());
            }
        }
        worst
    }
}

/// Maps DFT indices of an N×N image with a given DFOV to spatial
/// frequencies in line pairs per centimetre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    size: usize,
    dfov_cm: f64,
}

impl FrequencyGrid {
    pub fn new(size: usize, dfov_cm: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("grid size must be positive".into()));
        }
        validate_dfov(dfov_cm)?;
        Ok(Self { size, dfov_cm })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dfov_cm(&self) -> f64 {
        self.dfov_cm
    }

    pub fn pixel_spacing_cm(&self) -> f64 {
        self.dfov_cm / self.size as f64
    }

    /// Maximum axial frequency, `N / (2 * DFOV)`.
    pub fn nyquist(&self) -> f64 {
        self.size as f64 / (2.0 * self.dfov_cm)
    }

    /// Signed frequency index in `[-N/2, N/2)`.
    pub fn signed_index(&self, k: usize) -> f64 {
        let n = self.size;
        if k < (n + 1) / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    }

    /// Signed axial frequency (lp/cm) of index `k`.
    pub fn axial_frequency(&self, k: usize) -> f64 {
        self.signed_index(k) / self.dfov_cm
    }

    pub fn frequency_at(&self, u: usize, v: usize) -> Result<f64> {
        if u >= self.size || v >= self.size {
            return Err(Error::IndexOutOfRange {
                u,
                v,
                size: self.size,
            });
        }
        Ok(self.radial(u, v))
    }

    pub(crate) fn radial(&self, u: usize, v: usize) -> f64 {
        let fu = self.axial_frequency(u);
        let fv = self.axial_frequency(v);
        (fu * fu + fv * fv).sqrt()
    }

    /// Radial frequency of every bin, row-major.
    pub fn radial_frequencies(&self) -> Vec<f64> {
        let n = self.size;
        let axial: Vec<f64> = (0..n).map(|k| self.axial_frequency(k)).collect();
        let mut out = Vec::with_capacity(n * n);
        for fu in &axial {
            for fv in &axial {
                out.push((fu * fu + fv * fv).sqrt());
            }
        }
        out
    }

    pub(crate) fn matches(&self, image: &Image) -> Result<()> {
        if image.size() != self.size {
            return Err(Error::SizeMismatch {
                expected: self.size,
                actual: image.size(),
            });
        }
        if !same_dfov(image.dfov_cm(), self.dfov_cm) {
            return Err(Error::DfovMismatch {
                expected: self.dfov_cm,
                actual: image.dfov_cm(),
            });
        }
        Ok(())
    }
}

pub(crate) fn same_dfov(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

fn transpose(data: &mut Vec<Complex64>, n: usize) {
    const BLOCK: usize = 32;
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for rb in (0..n).step_by(BLOCK) {
        for cb in (0..n).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(n) {
                for c in cb..(cb + BLOCK).min(n) {
                    out[c * n + r] = data[r * n + c];
                }
            }
        }
    }
    *data = out;
}

/// Unnormalized 2D transform over rows then columns, in place.
fn transform_2d(data: &mut Vec<Complex64>, n: usize, fft: &dyn Fft<f64>) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
}

/// Orthonormal 2D DFT: `ifft2(fft2(x)) == x` and norms are preserved.
pub fn fft2(image: &Image) -> Spectrum {
    let n = image.size();
    let mut data: Vec<Complex64> = image.pixels().iter().map(|&p| Complex64::new(p, 0.0)).collect();
    let (forward, _) = plans(n);
    transform_2d(&mut data, n, forward.as_ref());
    let scale = 1.0 / n as f64;
    for c in &mut data {
        *c *= scale;
    }
    Spectrum { size: n, data }
}

/// Inverse of [`fft2`], returning a real image on the given DFOV.
///
/// Fails with [`Error::NonRealResult`] when the imaginary residual exceeds
/// `1e-9` of the largest real magnitude, which means the spectrum was not
/// conjugate-symmetric.
pub fn ifft2(spectrum: &Spectrum, dfov_cm: f64) -> Result<Image> {
    let n = spectrum.size();
    let mut data = spectrum.data().to_vec();
    let (_, inverse) = plans(n);
    transform_2d(&mut data, n, inverse.as_ref());
    let scale = 1.0 / n as f64;
    let mut max_real: f64 = 0.0;
    let mut max_imag: f64 = 0.0;
    let pixels: Vec<f64> = data
        .iter()
        .map(|c| {
            let (re, im) = (c.re * scale, c.im * scale);
            max_real = max_real.max(re.abs());
            max_imag = max_imag.max(im.abs());
            re
        })
        .collect();
    if max_imag > 1e-9 * max_real {
        return Err(Error::NonRealResult { max_imag, max_real });
    }
    Image::new(n, dfov_cm, pixels)
}

/// `ifft2(filter ⊙ fft2(image))` for a real, index-symmetric filter.
pub(crate) fn filter_real(image: &Image, filter: &[f64]) -> Result<Image> {
    let mut spec = fft2(image);
    for (c, &g) in spec.data.iter_mut().zip(filter) {
        *c *= g;
    }
    ifft2(&spec, image.dfov_cm())
}
