//! Image-quality measurements: wire-phantom MTF estimation, curve
//! comparison and pixel metrics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{fft2, FrequencyGrid, Image};
use crate::mtf::KernelMtfProfile;
use crate::unroll::{mse, ssim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    Input,
    Target,
    Direct,
    Proposed,
    #[default]
    Estimated,
}

/// MTF samples on a strictly increasing frequency axis starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    samples: Vec<(f64, f64)>,
    dfov_cm: f64,
    source: CurveSource,
}

impl MtfCurve {
    pub fn new(samples: Vec<(f64, f64)>, dfov_cm: f64, source: CurveSource) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("MTF curve: {m}")));
        match samples.first() {
            Some(&(f, _)) if f == 0.0 => {}
            _ => return bad("must start at frequency 0"),
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("frequencies must be strictly increasing");
        }
        if samples.iter().any(|(f, m)| !f.is_finite() || !m.is_finite()) {
            return bad("values must be finite");
        }
        Ok(Self {
            samples,
            dfov_cm,
            source,
        })
    }

    /// Samples `profile` at the given frequencies.
    pub fn from_profile(profile: &KernelMtfProfile, freqs: &[f64], dfov_cm: f64, source: CurveSource) -> Result<Self> {
        let samples = freqs.iter().map(|&f| Ok((f, profile.eval(f)?))).collect::<Result<Vec<_>>>()?;
        Self::new(samples, dfov_cm, source)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn dfov_cm(&self) -> f64 {
        self.dfov_cm
    }

    pub fn source(&self) -> CurveSource {
        self.source
    }

    pub fn max_frequency(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    /// Linear interpolation; `f` must lie within the curve.
    pub fn value_at(&self, f: f64) -> f64 {
        let s = &self.samples;
        let i = s.partition_point(|p| p.0 <= f);
        if i == 0 {
            return s[0].1;
        }
        if i >= s.len() {
            return s[s.len() - 1].1;
        }
        let (f0, m0) = s[i - 1];
        let (f1, m1) = s[i];
        m0 + (m1 - m0) * (f - f0) / (f1 - f0)
    }

    /// CSV with header `freq_lp_per_cm,mtf`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["freq_lp_per_cm", "mtf"])?;
        for (f, m) in &self.samples {
            out.write_record([f.to_string(), m.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, dfov_cm: f64, source: CurveSource) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["freq_lp_per_cm", "mtf"] {
            return Err(Error::Format {
                what: "MTF CSV",
                reason: "expected header freq_lp_per_cm,mtf".into(),
            });
        }
        let mut samples = Vec::new();
        for row in rdr.deserialize() {
            let (f, m): (f64, f64) = row?;
            samples.push((f, m));
        }
        Self::new(samples, dfov_cm, source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    Hann,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Estimates the MTF from a point response.
///
/// The ROI of side `2·roi_half_width + 1` is centred on the largest
/// `|pixel|`. The median of its border ring is subtracted, the optional
/// window applied, and the DFT magnitude averaged over rings of one ROI
/// frequency step (nearest ring, empty rings filled linearly). The curve is
/// normalised to 1 at DC.
pub fn estimate_mtf(wire: &Image, roi_half_width: usize, window: Window) -> Result<MtfCurve> {
    let n = wire.size();
    if roi_half_width == 0 {
        return Err(Error::InvalidParameter("roi_half_width must be >= 1".into()));
    }
    let (peak_idx, _) = wire
        .pixels()
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, p)| if p.abs() > best.1 { (i, p.abs()) } else { best });
    let (row, col) = (peak_idx / n, peak_idx % n);
    if wire.pixels()[peak_idx] == 0.0 {
        return Err(Error::NoPeak { peak: 0.0, floor: 0.0 });
    }
    let h = roi_half_width;
    if row < h || col < h || row + h >= n || col + h >= n {
        return Err(Error::RoiOutOfBounds {
            row,
            col,
            half_width: h,
            size: n,
        });
    }
    let side = 2 * h + 1;
    let mut roi: Vec<f64> = (0..side * side)
        .map(|i| wire.get(row - h + i / side, col - h + i % side))
        .collect();
    let ring: Vec<f64> = (0..side * side)
        .filter(|i| {
            let (r, c) = (i / side, i % side);
            r == 0 || c == 0 || r == side - 1 || c == side - 1
        })
        .map(|i| roi[i])
        .collect();
    let ring_mean = ring.iter().sum::<f64>() / ring.len() as f64;
    let ring_std = (ring.iter().map(|v| (v - ring_mean).powi(2)).sum::<f64>() / ring.len() as f64).sqrt();
    let background = median(ring);
    let peak = wire.pixels()[peak_idx].abs();
    let floor = 3.0 * ring_std;
    if !(peak > floor) || peak == 0.0 {
        return Err(Error::NoPeak { peak, floor });
    }
    roi.iter_mut().for_each(|v| *v -= background);
    if window == Window::Hann {
        let w: Vec<f64> = (0..side)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (side - 1) as f64).cos())
            .collect();
        for (i, v) in roi.iter_mut().enumerate() {
            *v *= w[i / side] * w[i % side];
        }
    }
    let spacing = wire.pixel_spacing_cm();
    let roi_image = Image::new(side, side as f64 * spacing, roi)?;
    let spec = fft2(&roi_image);
    let grid = FrequencyGrid::new(side, side as f64 * spacing)?;
    let bins = side / 2 + 1;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for u in 0..side {
        for v in 0..side {
            let r = grid.signed_index(u).hypot(grid.signed_index(v));
            let k = r.round() as usize;
            if k < bins {
                sums[k] += spec.get(u, v).norm();
                counts[k] += 1;
            }
        }
    }
    let mut values: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    infill(&mut values);
    let dc = values[0].expect("the DC bin always has one sample");
    if !(dc.abs() > 0.0) {
        return Err(Error::NoPeak { peak, floor });
    }
    let step = 1.0 / (side as f64 * spacing);
    let samples = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| (k as f64 * step, v.expect("filled") / dc))
        .collect();
    MtfCurve::new(samples, wire.dfov_cm(), CurveSource::Estimated)
}

/// Linear infill between known neighbours, constant extension at the end.
fn infill(values: &mut [Option<f64>]) {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    for i in 0..values.len() {
        if values[i].is_some() {
            continue;
        }
        let before = known.iter().rev().find(|&&k| k < i).copied();
        let after = known.iter().find(|&&k| k > i).copied();
        values[i] = match (before, after) {
            (Some(a), Some(b)) => {
                let (va, vb) = (values[a].unwrap(), values[b].unwrap());
                Some(va + (vb - va) * (i - a) as f64 / (b - a) as f64)
            }
            (Some(a), None) => values[a],
            (None, Some(b)) => values[b],
            (None, None) => None,
        };
    }
}

/// RMSE between two curves on `[f_lo, f_hi]`, both linearly interpolated
/// onto the union of their sample frequencies in the band plus its ends.
pub fn mtf_fidelity(estimated: &MtfCurve, reference: &MtfCurve, band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    let support = estimated.max_frequency().min(reference.max_frequency());
    if !(lo >= 0.0 && lo < hi && hi <= support * (1.0 + 1e-12)) {
        return Err(Error::BandOutOfRange { lo, hi });
    }
    let mut axis: Vec<f64> = estimated
        .samples()
        .iter()
        .chain(reference.samples())
        .map(|s| s.0)
        .filter(|&f| f > lo && f < hi)
        .chain([lo, hi])
        .collect();
    axis.sort_by(|a, b| a.total_cmp(b));
    axis.dedup();
    let sum: f64 = axis
        .iter()
        .map(|&f| (estimated.value_at(f) - reference.value_at(f)).powi(2))
        .sum();
    Ok((sum / axis.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    /// `+inf` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
}

/// MSE, PSNR against the target's dynamic range, and SSIM.
pub fn image_metrics(pred: &Image, target: &Image) -> Result<ImageMetrics> {
    let err = mse(pred, target)?;
    let p = target.pixels();
    let range = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - p.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = if range > 0.0 { range } else { 1.0 };
    let psnr = if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / err).log10()
    };
    Ok(ImageMetrics {
        mse: err,
        psnr,
        ssim: ssim(pred, target)?,
    })
}
