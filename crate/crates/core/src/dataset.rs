//! Simulated smooth/sharp training pairs and their on-disk manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FrequencyGrid, Image};
use crate::ksim::{load_ksim, save_ksim};
use crate::mtf::{sample_on_grid, KernelMtfProfile};
use crate::noise::{kernel_noise, NoiseModel};
use crate::phantom::{random_phantom, shepp_logan, WaterPhantom};

/// One smooth-kernel input and its sharp-kernel target on the same DFOV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Image,
    pub target: Image,
}

impl TrainingPair {
    pub fn dfov_cm(&self) -> f64 {
        self.input.dfov_cm()
    }
}

/// How kernel noise enters a simulated pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInjection {
    /// Independent kernel-shaped fields added in the image domain.
    #[default]
    Additive,
    /// Mean-removed central patches cut from simulated water phantoms twice
    /// the image size.
    WaterPatch,
}

const INPUT_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

fn blur(image: &Image, kernel: &KernelMtfProfile) -> Result<Image> {
    let filter = sample_on_grid(kernel, image.grid());
    crate::image::filter_real(image, filter.values())
}

fn noise_for(
    grid: FrequencyGrid,
    model: &NoiseModel,
    kernel: &KernelMtfProfile,
    seed: u64,
    stream: u64,
    injection: NoiseInjection,
) -> Result<Image> {
    match injection {
        NoiseInjection::Additive => kernel_noise(grid, model, kernel, seed, stream),
        NoiseInjection::WaterPatch => {
            let n = grid.size();
            let big = 2 * n;
            let phantom = WaterPhantom::default();
            let noise = kernel_noise(
                FrequencyGrid::new(big, 2.0 * grid.dfov_cm())?,
                model,
                kernel,
                seed,
                stream,
            )?;
            let offset = n / 2;
            // the 2N disk of diameter 0.9 * 2N covers the whole central N×N patch
            Image::from_fn(n, grid.dfov_cm(), |r, c| {
                debug_assert!(phantom.inside(big, r + offset, c + offset));
                noise.get(r + offset, c + offset)
            })
        }
    }
}

/// Renders `ground_truth` through both kernels and adds independent noise
/// realizations (streams 1 and 2 of `seed`).
pub fn make_training_pair(
    ground_truth: &Image,
    input_mtf: &KernelMtfProfile,
    target_mtf: &KernelMtfProfile,
    model: &NoiseModel,
    seed: u64,
) -> Result<TrainingPair> {
    make_training_pair_with(ground_truth, input_mtf, target_mtf, model, seed, NoiseInjection::Additive)
}

pub fn make_training_pair_with(
    ground_truth: &Image,
    input_mtf: &KernelMtfProfile,
    target_mtf: &KernelMtfProfile,
    model: &NoiseModel,
    seed: u64,
    injection: NoiseInjection,
) -> Result<TrainingPair> {
    input_mtf.validate()?;
    target_mtf.validate()?;
    let grid = ground_truth.grid();
    let input = blur(ground_truth, input_mtf)?
        .add_scaled(&noise_for(grid, model, input_mtf, seed, INPUT_STREAM, injection)?, 1.0)?;
    let target = blur(ground_truth, target_mtf)?
        .add_scaled(&noise_for(grid, model, target_mtf, seed, TARGET_STREAM, injection)?, 1.0)?;
    Ok(TrainingPair { input, target })
}

/// Ground-truth scenes used when simulating a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    RandomEllipses,
    SheppLogan,
}

/// Everything needed to regenerate a simulated dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub size: usize,
    pub dfovs_cm: Vec<f64>,
    pub input_profile: KernelMtfProfile,
    pub target_profile: KernelMtfProfile,
    pub noise: NoiseModel,
    #[serde(default)]
    pub injection: NoiseInjection,
    #[serde(default)]
    pub scene: SceneKind,
    pub seed: u64,
}

impl DatasetSpec {
    /// Seed of pair `index`; pairs are independent of each other and of
    /// the order in which they are generated.
    pub fn pair_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
            .rotate_left(17)
    }

    /// DFOVs are assigned round-robin.
    pub fn pair_dfov(&self, index: usize) -> f64 {
        self.dfovs_cm[index % self.dfovs_cm.len()]
    }

    pub fn generate_pair(&self, index: usize) -> Result<TrainingPair> {
        let dfov = self.pair_dfov(index);
        let seed = self.pair_seed(index);
        let truth = match self.scene {
            SceneKind::RandomEllipses => random_phantom(self.size, dfov, seed)?,
            SceneKind::SheppLogan => shepp_logan(self.size, dfov)?,
        };
        make_training_pair_with(
            &truth,
            &self.input_profile,
            &self.target_profile,
            &self.noise,
            seed,
            self.injection,
        )
    }

    /// Generates every pair in parallel, returned in index order.
    pub fn generate(&self) -> Result<Vec<TrainingPair>> {
        if self.dfovs_cm.is_empty() {
            return Err(Error::InvalidParameter("at least one DFOV is required".into()));
        }
        (0..self.count).into_par_iter().map(|i| self.generate_pair(i)).collect()
    }

    /// Writes `pair_XXXXX_{input,target}.ksim` files and `manifest.json`
    /// into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(out_dir)?;
        let pairs = self.generate()?;
        let mut entries = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let input_path = format!("pair_{i:05}_input.ksim");
            let target_path = format!("pair_{i:05}_target.ksim");
            save_ksim(out_dir.join(&input_path), &pair.input)?;
            save_ksim(out_dir.join(&target_path), &pair.target)?;
            entries.push(ManifestEntry {
                input_path: input_path.into(),
                target_path: target_path.into(),
                dfov_cm: pair.dfov_cm(),
                seed: self.pair_seed(i),
            });
        }
        let manifest = DatasetManifest {
            version: 1,
            input_profile: self.input_profile.clone(),
            target_profile: self.target_profile.clone(),
            noise: Some(self.noise.clone()),
            pairs: entries,
        };
        manifest.save(&out_dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input_path: PathBuf,
    pub target_path: PathBuf,
    pub dfov_cm: f64,
    pub seed: u64,
}

/// JSON listing of training pairs. Relative paths are resolved against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub input_profile: KernelMtfProfile,
    pub target_profile: KernelMtfProfile,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub pairs: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.input_profile.validate()?;
        manifest.target_profile.validate()?;
        Ok(manifest)
    }

    /// Loads every pair, checking that the stored DFOV matches the files.
    pub fn load_pairs(&self, base_dir: &Path) -> Result<Vec<TrainingPair>> {
        self.pairs
            .iter()
            .map(|e| {
                let input = load_ksim(base_dir.join(&e.input_path))?;
                let target = load_ksim(base_dir.join(&e.target_path))?;
                input.check_same_size(&target)?;
                for img in [&input, &target] {
                    if !crate::image::same_dfov(img.dfov_cm(), e.dfov_cm) {
                        return Err(Error::DfovMismatch {
                            expected: e.dfov_cm,
                            actual: img.dfov_cm(),
                        });
                    }
                }
                Ok(TrainingPair { input, target })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::direct_ratio_synthesis;
    use crate::mtf::ratio_filter;

    fn clean() -> NoiseModel {
        NoiseModel::new(0.0, KernelMtfProfile::default_input(), 1.0).unwrap()
    }

    #[test]
    fn equal_kernels_without_noise_give_equal_images() {
        let gt = shepp_logan(64, 10.0).unwrap();
        let k = KernelMtfProfile::default_input();
        let pair = make_training_pair(&gt, &k, &k, &clean(), 3).unwrap();
        assert_eq!(pair.input, pair.target);
    }

    #[test]
    fn noiseless_pair_is_consistent_with_direct_ratio() {
        let gt = shepp_logan(64, 10.0).unwrap();
        let (i, t) = (KernelMtfProfile::default_input(), KernelMtfProfile::default_target());
        let pair = make_training_pair(&gt, &i, &t, &clean(), 3).unwrap();
        let ratio = ratio_filter(&i, &t, gt.grid(), 0.0).unwrap();
        let out = direct_ratio_synthesis(&pair.input, &ratio).unwrap();
        assert!(out.relative_l2(&pair.target) < 1e-6, "{}", out.relative_l2(&pair.target));
    }

    #[test]
    fn target_noise_exceeds_input_noise() {
        let zero = Image::zeros(64, 10.0).unwrap();
        let model = NoiseModel::new(1.0, KernelMtfProfile::default_input(), 1.0).unwrap();
        let (i, t) = (KernelMtfProfile::default_input(), KernelMtfProfile::default_target());
        let (mut si, mut st) = (0.0, 0.0);
        for seed in 0..20 {
            let pair = make_training_pair(&zero, &i, &t, &model, seed).unwrap();
            si += pair.input.std();
            st += pair.target.std();
        }
        assert!(si < st);
    }

    #[test]
    fn water_patch_variant_has_same_texture_scale() {
        let zero = Image::zeros(32, 10.0).unwrap();
        let model = NoiseModel::new(1.0, KernelMtfProfile::default_input(), 1.0).unwrap();
        let k = KernelMtfProfile::default_input();
        let pair = make_training_pair_with(&zero, &k, &k, &model, 1, NoiseInjection::WaterPatch).unwrap();
        let s = pair.input.std();
        assert!(s > 0.5 && s < 1.5, "{s}");
        assert_ne!(pair.input, pair.target);
    }

    #[test]
    fn round_robin_dfovs_and_disk_round_trip() {
        let spec = DatasetSpec {
            count: 8,
            size: 32,
            dfovs_cm: vec![5.0, 10.0, 15.0, 20.0],
            input_profile: KernelMtfProfile::default_input(),
            target_profile: KernelMtfProfile::default_target(),
            noise: NoiseModel::new(0.01, KernelMtfProfile::default_input(), 1.0).unwrap(),
            injection: NoiseInjection::Additive,
            scene: SceneKind::RandomEllipses,
            seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = spec.write(dir.path()).unwrap();
        for dfov in [5.0, 10.0, 15.0, 20.0] {
            assert_eq!(manifest.pairs.iter().filter(|e| e.dfov_cm == dfov).count(), 2);
        }
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, manifest);
        let pairs = loaded.load_pairs(dir.path()).unwrap();
        assert_eq!(pairs.len(), 8);
        let again = spec.generate().unwrap();
        for (a, b) in pairs.iter().zip(&again) {
            for (x, y) in a.input.pixels().iter().zip(b.input.pixels()) {
                assert_eq!(*x as f32 as f64, *y as f32 as f64);
            }
        }
    }
}
