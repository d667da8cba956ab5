//! Training loop for the shared projection weights.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, LossValue};
use super::{backprop_unrolls, synthesize, synthesize_with_tape, UnrollConfig};
use crate::dataset::TrainingPair;
use crate::denoiser::{denoise_backward, denoise_forward, DenoiserParams, Projector};
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::image::{same_dfov, FrequencyGrid, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Learn the projection inside the unrolled solver.
    #[default]
    ModelBased,
    /// Learn a plain image-to-image map, no operator and no data consistency.
    DirectLearning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub w_ssim: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mode: TrainMode,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 8,
            w_ssim: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mode: TrainMode::ModelBased,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// The full-size recipe: 500 epochs.
    pub fn full_scale() -> Self {
        Self {
            epochs: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.w_ssim.is_finite() && self.w_ssim >= 0.0) {
            return bad(format!("w_ssim must be >= 0, got {}", self.w_ssim));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("optimizer needs 0 <= beta < 1 and epsilon > 0".into());
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer. With gradient `g` at step `t`:
///
/// ```text
/// m ← β₁ m + (1 − β₁) g
/// v ← β₂ v + (1 − β₂) g²
/// θ ← θ − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: DenoiserParams,
    v: DenoiserParams,
    step: u64,
}

impl Adam {
    pub fn new(params: &DenoiserParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut DenoiserParams, grad: &DenoiserParams, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for ((theta, g), (m, v)) in params.iter_mut().zip(grad.iter()).zip(moments) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *theta -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Weights, optimizer moments and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub adam: Adam,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: DenoiserParams) -> Self {
        Self {
            adam: Adam::new(&params),
            params,
            epoch: 0,
        }
    }

    /// Continue from weights that already went through `epoch` epochs. The
    /// optimizer moments restart from zero.
    pub fn resume(params: DenoiserParams, epoch: usize) -> Self {
        Self {
            epoch,
            ..Self::new(params)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_mse: f64,
    pub mean_ssim: f64,
}

impl EpochStats {
    /// Writes a CSV log with header `epoch,mean_loss,mean_mse,mean_ssim`.
    pub fn write_csv<W: Write>(w: W, rows: &[EpochStats], header: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(header).from_writer(w);
        for row in rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochStats>,
}

/// One operator per distinct grid in the dataset.
struct OperatorCache {
    ops: Vec<(usize, f64, ForwardOperator)>,
}

impl OperatorCache {
    fn build<F>(pairs: &[TrainingPair], factory: &F) -> Result<Self>
    where
        F: Fn(FrequencyGrid) -> Result<ForwardOperator>,
    {
        let mut ops: Vec<(usize, f64, ForwardOperator)> = Vec::new();
        for p in pairs {
            let (n, dfov) = (p.input.size(), p.dfov_cm());
            if !ops.iter().any(|(m, d, _)| *m == n && same_dfov(*d, dfov)) {
                let op = factory(FrequencyGrid::new(n, dfov)?)?;
                op.grid().matches(&p.input)?;
                ops.push((n, dfov, op));
            }
        }
        Ok(Self { ops })
    }

    fn get(&self, image: &Image) -> &ForwardOperator {
        let (_, _, op) = self
            .ops
            .iter()
            .find(|(n, d, _)| *n == image.size() && same_dfov(*d, image.dfov_cm()))
            .expect("every pair's grid was cached");
        op
    }
}

/// The trained model's output for one smooth-kernel image.
pub fn predict(
    mode: TrainMode,
    y: &Image,
    op: &ForwardOperator,
    params: &DenoiserParams,
    ucfg: &UnrollConfig,
) -> Result<Image> {
    match mode {
        TrainMode::ModelBased => synthesize(y, op, params, ucfg),
        TrainMode::DirectLearning => params.project(y),
    }
}

fn sample_gradient(
    pair: &TrainingPair,
    op: &ForwardOperator,
    params: &DenoiserParams,
    tcfg: &TrainConfig,
    ucfg: &UnrollConfig,
) -> Result<(LossValue, DenoiserParams)> {
    match tcfg.mode {
        TrainMode::ModelBased => {
            let (pred, tape) = synthesize_with_tape(&pair.input, op, params, ucfg)?;
            let (value, g) = loss(&pred, &pair.target, tcfg.w_ssim)?;
            let grads = backprop_unrolls(&tape, op, params, &g, ucfg.dc_gradient)?;
            Ok((value, grads))
        }
        TrainMode::DirectLearning => {
            let (pred, tape) = denoise_forward(params, &pair.input)?;
            let (value, g) = loss(&pred, &pair.target, tcfg.w_ssim)?;
            let (grads, _) = denoise_backward(params, &tape, &g)?;
            Ok((value, grads))
        }
    }
}

fn mean_stats(values: &[LossValue], epoch: usize) -> EpochStats {
    let n = values.len() as f64;
    EpochStats {
        epoch,
        mean_loss: values.iter().map(|v| v.value).sum::<f64>() / n,
        mean_mse: values.iter().map(|v| v.mse).sum::<f64>() / n,
        mean_ssim: values.iter().map(|v| v.ssim).sum::<f64>() / n,
    }
}

/// Mean loss of `params` over `pairs` without updating anything.
pub fn evaluate<F>(
    pairs: &[TrainingPair],
    factory: &F,
    params: &DenoiserParams,
    tcfg: &TrainConfig,
    ucfg: &UnrollConfig,
) -> Result<EpochStats>
where
    F: Fn(FrequencyGrid) -> Result<ForwardOperator>,
{
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cache = OperatorCache::build(pairs, factory)?;
    let values = pairs
        .par_iter()
        .map(|p| {
            let pred = predict(tcfg.mode, &p.input, cache.get(&p.input), params, ucfg)?;
            Ok(loss(&pred, &p.target, tcfg.w_ssim)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_stats(&values, 0))
}

/// Minimizes the mean loss over `pairs` for `tcfg.epochs` epochs, starting
/// from `state`. Batches are drawn from a per-epoch shuffle seeded by
/// `(seed, epoch)`; per-sample gradients may be computed in parallel and are
/// summed in batch order. `on_epoch` runs after every epoch.
pub fn train<F, H>(
    pairs: &[TrainingPair],
    factory: &F,
    tcfg: &TrainConfig,
    ucfg: &UnrollConfig,
    mut state: TrainState,
    seed: u64,
    mut on_epoch: H,
) -> Result<TrainOutcome>
where
    F: Fn(FrequencyGrid) -> Result<ForwardOperator> + Sync,
    H: FnMut(&EpochStats, &TrainState) -> Result<()>,
{
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    tcfg.validate()?;
    ucfg.validate()?;
    let cache = OperatorCache::build(pairs, factory)?;
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..tcfg.epochs {
        let epoch = state.epoch + 1;
        let ucfg = UnrollConfig {
            epoch: state.epoch,
            ..ucfg.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut values = Vec::with_capacity(pairs.len());
        for batch in order.chunks(tcfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let pair = &pairs[i];
                    sample_gradient(pair, cache.get(&pair.input), &state.params, tcfg, &ucfg)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    // non-finite pixels inside the forward pass
                    Error::InvalidImage(_) => Error::Diverged { epoch, loss: f64::NAN },
                    other => other,
                })?;
            let mut grad = state.params.zeros_like();
            for (value, g) in &results {
                if !value.value.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        loss: value.value,
                    });
                }
                grad.add_scaled(g, 1.0);
                values.push(*value);
            }
            grad.scale(1.0 / batch.len() as f64);
            state.adam.update(&mut state.params, &grad, tcfg);
        }
        state.epoch = epoch;
        let stats = mean_stats(&values, epoch);
        on_epoch(&stats, &state)?;
        log.push(stats);
    }
    Ok(TrainOutcome { state, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_training_pair;
    use crate::mtf::KernelMtfProfile;
    use crate::noise::NoiseModel;
    use crate::phantom::random_phantom;

    fn profiles() -> (KernelMtfProfile, KernelMtfProfile) {
        (KernelMtfProfile::default_input(), KernelMtfProfile::default_target())
    }

    fn factory(grid: FrequencyGrid) -> Result<ForwardOperator> {
        let (i, t) = profiles();
        ForwardOperator::for_kernels(&i, &t, grid, 1e-3)
    }

    fn pairs(count: usize, n: usize) -> Vec<TrainingPair> {
        let (i, t) = profiles();
        let noise = NoiseModel::new(0.01, t.clone(), 1.0).unwrap();
        (0..count)
            .map(|s| {
                let dfov = [10.0, 20.0][s % 2];
                let gt = random_phantom(n, dfov, s as u64).unwrap();
                make_training_pair(&gt, &i, &t, &noise, s as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = DenoiserParams::zeros(&[1, 2, 1]).unwrap();
        let mut g = p.zeros_like();
        g.set(0, 3.0);
        g.set(1, -0.5);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &g, &cfg);
        assert!((p.get(0) + 0.01).abs() < 1e-9);
        assert!((p.get(1) - 0.01).abs() < 1e-9);
        assert_eq!(p.get(2), 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let data = pairs(3, 16);
        let init = DenoiserParams::default_init(1);
        let tcfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out = train(&data, &factory, &tcfg, &UnrollConfig::default(), TrainState::new(init.clone()), 0, |_, _| Ok(())).unwrap();
        assert_eq!(out.state.params, init);
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.log[1].epoch, 2);
    }

    #[test]
    fn direct_learning_starts_as_identity() {
        let data = pairs(1, 16);
        let init = DenoiserParams::default_init(2);
        let op = factory(data[0].input.grid()).unwrap();
        let pred = predict(TrainMode::DirectLearning, &data[0].input, &op, &init, &UnrollConfig::default()).unwrap();
        assert_eq!(pred, data[0].input);
    }

    #[test]
    fn single_pair_loss_decreases() {
        let data = pairs(1, 32);
        let tcfg = TrainConfig {
            epochs: 10,
            learning_rate: 1e-4,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let ucfg = UnrollConfig {
            unrolls: 2,
            ..UnrollConfig::default()
        };
        let out = train(&data, &factory, &tcfg, &ucfg, TrainState::new(DenoiserParams::default_init(3)), 4, |_, _| Ok(())).unwrap();
        let after = evaluate(&data, &factory, &out.state.params, &tcfg, &ucfg).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].mean_loss < w[0].mean_loss, "{:?}", out.log);
        }
        assert!(after.mean_loss < out.log[0].mean_loss);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let data = pairs(4, 16);
        let tcfg = TrainConfig {
            epochs: 2,
            learning_rate: 1e-3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let ucfg = UnrollConfig {
            unrolls: 1,
            ..UnrollConfig::default()
        };
        let run = |state| train(&data, &factory, &tcfg, &ucfg, state, 9, |_, _| Ok(())).unwrap();
        let a = run(TrainState::new(DenoiserParams::default_init(5)));
        let b = run(TrainState::new(DenoiserParams::default_init(5)));
        assert_eq!(a.state.params, b.state.params);
        let c = run(TrainState::resume(a.state.params.clone(), a.state.epoch));
        assert_eq!(c.log.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![3, 4]);
        let mut csv = Vec::new();
        EpochStats::write_csv(&mut csv, &a.log, true).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("epoch,mean_loss,mean_mse,mean_ssim\n"));
    }

    #[test]
    fn empty_and_divergent_runs_fail() {
        let tcfg = TrainConfig::default();
        let ucfg = UnrollConfig::default();
        let empty = train(&[], &factory, &tcfg, &ucfg, TrainState::new(DenoiserParams::default_init(0)), 0, |_, _| Ok(()));
        assert!(matches!(empty, Err(Error::EmptyDataset)));
        let data = pairs(2, 16);
        let blowup = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            batch_size: 1,
            mode: TrainMode::DirectLearning,
            ..TrainConfig::default()
        };
        let mut params = DenoiserParams::default_init(0);
        params.iter_mut().for_each(|v| *v = 1e150);
        let r = train(&data, &factory, &blowup, &ucfg, TrainState::new(params), 0, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }
}
