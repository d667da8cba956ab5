//! Radial kernel MTF models and the transfer filters sampled from them.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FrequencyGrid;

/// Radial modulation transfer function of a reconstruction kernel.
///
/// Serialized as `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum KernelMtfProfile {
    /// `exp(-(f/f0)^p)`.
    SmoothGaussian { f0: f64, p: f64 },
    /// Gaussian-type envelope times a mid-frequency boost that peaks at
    /// `1 + beta` when `f == f_beta`.
    SharpBoosted { f0: f64, p: f64, beta: f64, f_beta: f64 },
    /// Linearly interpolated `(f, M)` samples, clamped past the last one.
    Tabulated { samples: Vec<(f64, f64)> },
}

impl KernelMtfProfile {
    pub fn smooth_gaussian(f0: f64, p: f64) -> Result<Self> {
        let profile = Self::SmoothGaussian { f0, p };
        profile.validate()?;
        Ok(profile)
    }

    pub fn sharp_boosted(f0: f64, p: f64, beta: f64, f_beta: f64) -> Result<Self> {
        let profile = Self::SharpBoosted { f0, p, beta, f_beta };
        profile.validate()?;
        Ok(profile)
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        let profile = Self::Tabulated { samples };
        profile.validate()?;
        Ok(profile)
    }

    /// Smooth (input) kernel used when none is configured.
    pub fn default_input() -> Self {
        Self::SmoothGaussian { f0: 6.0, p: 2.2 }
    }

    /// Sharp (target) kernel used when none is configured.
    pub fn default_target() -> Self {
        Self::SharpBoosted {
            f0: 11.0,
            p: 2.5,
            beta: 0.25,
            f_beta: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            Self::SmoothGaussian { f0, p } => {
                if !positive(f0) || !positive(p) {
                    return bad(format!("SmoothGaussian needs f0 > 0 and p > 0, got f0={f0}, p={p}"));
                }
            }
            Self::SharpBoosted { f0, p, beta, f_beta } => {
                if !positive(f0) || !positive(p) || !positive(f_beta) || !(beta.is_finite() && beta >= 0.0) {
                    return bad(format!(
                        "SharpBoosted needs f0, p, f_beta > 0 and beta >= 0, got f0={f0}, p={p}, beta={beta}, f_beta={f_beta}"
                    ));
                }
            }
            Self::Tabulated { ref samples } => {
                match samples.first() {
                    Some(&(f, m)) if f == 0.0 && m == 1.0 => {}
                    _ => return bad("tabulated MTF must start with the sample (0, 1)".into()),
                }
                for w in samples.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return bad("tabulated frequencies must be strictly increasing".into());
                    }
                }
                if samples.iter().any(|&(f, m)| !f.is_finite() || !m.is_finite() || m < 0.0) {
                    return bad("tabulated samples must be finite with non-negative MTF".into());
                }
            }
        }
        Ok(())
    }

    /// MTF value at radial frequency `f` (lp/cm).
    pub fn eval(&self, f: f64) -> Result<f64> {
        if f < 0.0 || f.is_nan() {
            return Err(Error::NegativeFrequency(f));
        }
        Ok(self.eval_unchecked(f))
    }

    fn eval_unchecked(&self, f: f64) -> f64 {
        match *self {
            Self::SmoothGaussian { f0, p } => (-(f / f0).powf(p)).exp(),
            Self::SharpBoosted { f0, p, beta, f_beta } => {
                let r2 = (f / f_beta).powi(2);
                (1.0 + beta * r2 * (1.0 - r2).exp()) * (-(f / f0).powf(p)).exp()
            }
            Self::Tabulated { ref samples } => interpolate(samples, f),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(s)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialization cannot fail")
    }

    /// Loads a profile from a JSON definition, or from a `f_lp_per_cm,mtf`
    /// CSV table when the file extension is `.csv`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(file)
        } else {
            let mut s = String::new();
            std::io::BufReader::new(file).read_to_string(&mut s)?;
            Self::from_json_str(&s)
        }
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "f_lp_per_cm" || &headers[1] != "mtf" {
            return Err(Error::Format {
                what: "MTF table",
                reason: format!("expected header `f_lp_per_cm,mtf`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut samples = Vec::new();
        for record in reader.deserialize() {
            let (f, m): (f64, f64) = record?;
            samples.push((f, m));
        }
        Self::tabulated(samples)
    }

    /// Writes the profile sampled at `frequencies` as a `f_lp_per_cm,mtf` table.
    pub fn write_csv<W: Write>(&self, w: W, frequencies: &[f64]) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["f_lp_per_cm", "mtf"])?;
        for &f in frequencies {
            writer.serialize((f, self.eval(f)?))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn interpolate(samples: &[(f64, f64)], f: f64) -> f64 {
    let idx = samples.partition_point(|&(x, _)| x <= f);
    if idx == samples.len() {
        return samples[samples.len() - 1].1;
    }
    // samples[0].0 == 0 <= f, so idx >= 1 here
    let (x0, y0) = samples[idx - 1];
    let (x1, y1) = samples[idx];
    y0 + (y1 - y0) * (f - x0) / (x1 - x0)
}

/// A real, non-negative spectral multiplier sampled on a frequency grid in
/// DFT index order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFilter {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl TransferFilter {
    /// Wraps explicit filter values. They must be finite, non-negative,
    /// exactly 1 at DC and exactly index-symmetric.
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        let n = grid.size();
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "filter for a {n}x{n} grid needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("filter values must be finite and non-negative".into()));
        }
        if values[0] != 1.0 {
            return Err(Error::InvalidParameter(format!("filter DC gain must be 1, got {}", values[0])));
        }
        for u in 0..n {
            for v in 0..n {
                if values[u * n + v] != values[((n - u) % n) * n + (n - v) % n] {
                    return Err(Error::InvalidParameter(format!("filter is not index-symmetric at ({u}, {v})")));
                }
            }
        }
        Ok(Self { grid, values })
    }

    /// The all-ones filter.
    pub fn identity(grid: FrequencyGrid) -> Self {
        let n = grid.size();
        Self {
            grid,
            values: vec![1.0; n * n],
        }
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.grid.size() + v]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Samples `profile` at the radial frequency of every grid bin.
pub fn sample_on_grid(profile: &KernelMtfProfile, grid: FrequencyGrid) -> TransferFilter {
    let values = grid.radial_frequencies().into_iter().map(|f| profile.eval_unchecked(f)).collect();
    TransferFilter { grid, values }
}

/// Regularized ratio `M_t M_i / (M_i² + eps)` of a target over an input MTF.
///
/// With `eps == 0` the plain ratio `M_t / M_i` is returned. The DC bin is
/// pinned to exactly 1 since both MTFs are 1 there.
pub fn ratio_filter(
    input_mtf: &KernelMtfProfile,
    target_mtf: &KernelMtfProfile,
    grid: FrequencyGrid,
    eps: f64,
) -> Result<TransferFilter> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be >= 0, got {eps}")));
    }
    let freqs = grid.radial_frequencies();
    let mut values = Vec::with_capacity(freqs.len());
    for f in freqs {
        let mi = input_mtf.eval_unchecked(f);
        let mt = target_mtf.eval_unchecked(f);
        let value = if eps == 0.0 {
            if mi == 0.0 {
                return Err(Error::DivisionBlowup { frequency: f });
            }
            mt / mi
        } else {
            mt * mi / (mi * mi + eps)
        };
        values.push(value);
    }
    values[0] = 1.0;
    if let Some(f) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::DivisionBlowup {
            frequency: grid.radial_frequencies()[f],
        });
    }
    Ok(TransferFilter { grid, values })
}
