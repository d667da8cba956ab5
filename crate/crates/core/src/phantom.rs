//! Synthetic test objects: Shepp-Logan slices, random ellipse scenes, wire
//! and water phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{validate_dfov, Image};
use crate::noise::{shaped_noise, NoiseModel};

/// An ellipse in normalized coordinates, `[-1, 1]` across the field of view
/// with `y` pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub angle_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub const fn new(center_x: f64, center_y: f64, semi_x: f64, semi_y: f64, angle_deg: f64, intensity: f64) -> Self {
        Self {
            center_x,
            center_y,
            semi_x,
            semi_y,
            angle_deg,
            intensity,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

/// Modified (high-contrast) Shepp-Logan table; values lie in `[0, 1]`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    Ellipse::new(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    Ellipse::new(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    Ellipse::new(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    Ellipse::new(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    Ellipse::new(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse::new(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse::new(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    Ellipse::new(0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
    Ellipse::new(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
];

/// Normalized coordinates of the centre of pixel `(row, col)`.
pub fn pixel_center(n: usize, row: usize, col: usize) -> (f64, f64) {
    let x = (2 * col + 1) as f64 / n as f64 - 1.0;
    let y = 1.0 - (2 * row + 1) as f64 / n as f64;
    (x, y)
}

/// Sums the intensities of every ellipse containing each pixel centre.
pub fn render_ellipses(n: usize, dfov_cm: f64, ellipses: &[Ellipse]) -> Result<Image> {
    Image::from_fn(n, dfov_cm, |row, col| {
        let (x, y) = pixel_center(n, row, col);
        ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum()
    })
}

pub fn shepp_logan(n: usize, dfov_cm: f64) -> Result<Image> {
    shepp_logan_windowed(n, dfov_cm, 0.0, 1.0)
}

/// Shepp-Logan with its `[0, 1]` range mapped linearly onto `[low, high]`.
pub fn shepp_logan_windowed(n: usize, dfov_cm: f64, low: f64, high: f64) -> Result<Image> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!("Shepp-Logan needs n >= 16, got {n}")));
    }
    render_ellipses(n, dfov_cm, &SHEPP_LOGAN)?.map(|v| low + v * (high - low))
}

/// A jittered Shepp-Logan head with a handful of extra small ellipses;
/// used as varied ground truth for training sets.
pub fn random_phantom(n: usize, dfov_cm: f64, seed: u64) -> Result<Image> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!("random phantom needs n >= 16, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.random_range(0.75..1.0);
    let rot = rng.random_range(-20.0f64..20.0);
    let (s, c) = rot.to_radians().sin_cos();
    let (sx, sy) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let mut ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|e| {
            let x = scale * e.center_x;
            let y = scale * e.center_y;
            Ellipse {
                center_x: x * c - y * s + sx,
                center_y: x * s + y * c + sy,
                semi_x: scale * e.semi_x,
                semi_y: scale * e.semi_y,
                angle_deg: e.angle_deg + rot,
                intensity: e.intensity,
            }
        })
        .collect();
    let extra = rng.random_range(4..=10);
    for _ in 0..extra {
        let r = rng.random_range(0.0..0.5) * scale;
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        ellipses.push(Ellipse {
            center_x: r * t.cos() + sx,
            center_y: r * t.sin() + sy,
            semi_x: rng.random_range(0.01..0.08),
            semi_y: rng.random_range(0.01..0.08),
            angle_deg: rng.random_range(0.0..180.0),
            intensity: sign * rng.random_range(0.05..0.3),
        });
    }
    render_ellipses(n, dfov_cm, &ellipses)
}

/// Zero background with a single-pixel impulse of `amplitude` at `(n/2, n/2)`.
pub fn wire_phantom(n: usize, dfov_cm: f64, amplitude: f64) -> Result<Image> {
    if n < 32 {
        return Err(Error::InvalidParameter(format!("wire phantom needs n >= 32, got {n}")));
    }
    let c = n / 2;
    Image::from_fn(n, dfov_cm, |r, col| if r == c && col == c { amplitude } else { 0.0 })
}

/// Geometry and levels of the simulated water phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterPhantom {
    pub disk_value: f64,
    pub background: f64,
    /// Disk diameter as a fraction of the image width.
    pub diameter_fraction: f64,
}

impl Default for WaterPhantom {
    fn default() -> Self {
        Self {
            disk_value: 0.0,
            background: -1000.0,
            diameter_fraction: 0.9,
        }
    }
}

impl WaterPhantom {
    pub fn inside(&self, n: usize, row: usize, col: usize) -> bool {
        let c = (n as f64 - 1.0) / 2.0;
        let r = self.diameter_fraction * n as f64 / 2.0;
        (row as f64 - c).powi(2) + (col as f64 - c).powi(2) <= r * r
    }

    /// Uniform disk plus kernel-shaped noise; deterministic in `seed`.
    pub fn render(&self, n: usize, dfov_cm: f64, model: &NoiseModel, seed: u64) -> Result<Image> {
        if n < 32 {
            return Err(Error::InvalidParameter(format!("water phantom needs n >= 32, got {n}")));
        }
        validate_dfov(dfov_cm)?;
        let noise = shaped_noise(crate::image::FrequencyGrid::new(n, dfov_cm)?, model, seed)?;
        Image::from_fn(n, dfov_cm, |r, c| {
            let base = if self.inside(n, r, c) { self.disk_value } else { self.background };
            base + noise.get(r, c)
        })
    }
}

pub fn water_phantom(n: usize, dfov_cm: f64, model: &NoiseModel, seed: u64) -> Result<Image> {
    WaterPhantom::default().render(n, dfov_cm, model, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtf::KernelMtfProfile;

    #[test]
    fn center_pixel_matches_point_oracle() {
        for &n in &[16, 64, 127, 256] {
            let img = shepp_logan(n, 20.0).unwrap();
            let (r, c) = (n / 2, n / 2);
            let (x, y) = pixel_center(n, r, c);
            // independent point-in-ellipse evaluation
            let mut expected = 0.0;
            for e in &SHEPP_LOGAN {
                let th = e.angle_deg * std::f64::consts::PI / 180.0;
                let xr = (x - e.center_x) * th.cos() + (y - e.center_y) * th.sin();
                let yr = -(x - e.center_x) * th.sin() + (y - e.center_y) * th.cos();
                if xr * xr / (e.semi_x * e.semi_x) + yr * yr / (e.semi_y * e.semi_y) <= 1.0 {
                    expected += e.intensity;
                }
            }
            assert!((img.get(r, c) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn corners_are_empty_and_range_is_unit() {
        let img = shepp_logan(128, 20.0).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(127, 127), 0.0);
        assert!(img.pixels().iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
        let w = shepp_logan_windowed(128, 20.0, -1000.0, 1000.0).unwrap();
        assert_eq!(w.get(0, 0), -1000.0);
        assert!(shepp_logan(8, 20.0).is_err());
    }

    #[test]
    fn symmetric_subset_is_mirror_symmetric() {
        let symmetric: Vec<Ellipse> = SHEPP_LOGAN
            .iter()
            .copied()
            .filter(|e| e.center_x == 0.0 && e.angle_deg == 0.0)
            .collect();
        assert_eq!(symmetric.len(), 6);
        let n = 96;
        let img = render_ellipses(n, 20.0, &symmetric).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(img.get(r, c), img.get(r, n - 1 - c));
            }
        }
        let full = shepp_logan(n, 20.0).unwrap();
        let asym = (0..n * n).any(|i| full.get(i / n, i % n) != full.get(i / n, n - 1 - i % n));
        assert!(asym);
    }

    #[test]
    fn wire_sums_to_amplitude() {
        let w = wire_phantom(64, 10.0, 2.5).unwrap();
        assert_eq!(w.sum(), 2.5);
        assert_eq!(w.get(32, 32), 2.5);
        assert!(wire_phantom(16, 10.0, 1.0).is_err());
    }

    #[test]
    fn water_phantom_clean_and_deterministic() {
        let clean = NoiseModel::new(0.0, KernelMtfProfile::default_input(), 1.0).unwrap();
        let spec = WaterPhantom::default();
        let img = spec.render(64, 20.0, &clean, 1).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let expected = if spec.inside(64, r, c) { 0.0 } else { -1000.0 };
                assert_eq!(img.get(r, c), expected);
            }
        }
        let noisy = NoiseModel::new(10.0, KernelMtfProfile::default_input(), 1.0).unwrap();
        assert_eq!(
            water_phantom(64, 20.0, &noisy, 7).unwrap(),
            water_phantom(64, 20.0, &noisy, 7).unwrap()
        );
        assert_ne!(
            water_phantom(64, 20.0, &noisy, 7).unwrap(),
            water_phantom(64, 20.0, &noisy, 8).unwrap()
        );
    }

    #[test]
    fn water_disk_mean_within_clt_bound() {
        let sigma = 10.0;
        let model = NoiseModel::new(sigma, KernelMtfProfile::default_input(), 1.0).unwrap();
        let spec = WaterPhantom::default();
        let n = 64;
        for seed in 0..10 {
            let img = spec.render(n, 20.0, &model, seed).unwrap();
            let inside: Vec<f64> = (0..n * n)
                .filter(|&i| spec.inside(n, i / n, i % n))
                .map(|i| img.pixels()[i])
                .collect();
            let mean = inside.iter().sum::<f64>() / inside.len() as f64;
            assert!(mean.abs() <= 3.0 * sigma / (inside.len() as f64).sqrt(), "seed {seed}: {mean}");
        }
    }

    #[test]
    fn random_phantoms_vary_with_seed() {
        let a = random_phantom(64, 10.0, 1).unwrap();
        assert_eq!(a, random_phantom(64, 10.0, 1).unwrap());
        assert_ne!(a, random_phantom(64, 10.0, 2).unwrap());
    }
}
