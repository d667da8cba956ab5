//! Unrolled alternating minimization: `K` rounds of a learned projection
//! followed by a closed-form data-consistency solve, with one shared set of
//! network weights.

mod loss;
mod train;

pub use loss::{loss, mse, ssim, ssim_with_range, LossValue};
pub use train::{
    evaluate, predict, train, Adam, EpochStats, TrainConfig, TrainMode, TrainOutcome, TrainState,
};

use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise_backward, denoise_forward, ActivationRecord, DenoiserParams, Projector};
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::image::Image;

/// Starting point of the unrolled iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `(HᵀH + λ₀ I)⁻¹ Hᵀ y`.
    #[default]
    Tikhonov,
    InputCopy,
}

/// What "decayed with iteration" counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `λ_k = λ₀ · decay^k` for unroll `k` of every forward pass.
    #[default]
    PerUnroll,
    /// Every unroll uses `λ₀ · decay^epoch`.
    PerEpoch,
}

/// How the backward sweep treats the data-consistency step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcGradient {
    /// Exact Jacobian `λ / (Λ² + λ)`.
    #[default]
    Exact,
    /// Pass the gradient through the step unchanged.
    StraightThrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnrollConfig {
    pub unrolls: usize,
    pub lambda0: f64,
    pub decay: f64,
    pub init: InitKind,
    pub decay_mode: DecayMode,
    /// Training epoch used by [`DecayMode::PerEpoch`].
    pub epoch: usize,
    pub dc_gradient: DcGradient,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        Self {
            unrolls: 5,
            lambda0: 0.5,
            decay: 0.9,
            init: InitKind::Tikhonov,
            decay_mode: DecayMode::PerUnroll,
            epoch: 0,
            dc_gradient: DcGradient::Exact,
        }
    }
}

/// `base · decay^k`, rounded to 15 significant digits so that decimal
/// schedules come out as their decimal values (`0.5 · 0.9³` is `0.3645`, not
/// `0.36450000000000005`). The rounding moves the value by at most 5e-15
/// relative.
fn decayed(base: f64, decay: f64, k: usize) -> f64 {
    let exact = base * decay.powi(k as i32);
    if exact == 0.0 || !exact.is_finite() {
        return exact;
    }
    format!("{exact:.14e}").parse().unwrap_or(exact)
}

impl UnrollConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda0 must be > 0, got {}", self.lambda0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidParameter(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }

    /// The weights `λ_0 .. λ_{K-1}` of one forward pass.
    pub fn lambdas(&self) -> Vec<f64> {
        match self.decay_mode {
            DecayMode::PerUnroll => (0..self.unrolls).map(|k| decayed(self.lambda0, self.decay, k)).collect(),
            DecayMode::PerEpoch => vec![decayed(self.lambda0, self.decay, self.epoch); self.unrolls],
        }
    }
}

fn initial_iterate(y: &Image, op: &ForwardOperator, cfg: &UnrollConfig) -> Result<Image> {
    match cfg.init {
        InitKind::Tikhonov => op.tikhonov_init(y, cfg.lambda0),
        InitKind::InputCopy => {
            op.grid().matches(y)?;
            Ok(y.clone())
        }
    }
}

/// Runs the unrolled iteration with any projection.
pub fn synthesize<P: Projector + ?Sized>(y: &Image, op: &ForwardOperator, denoiser: &P, cfg: &UnrollConfig) -> Result<Image> {
    cfg.validate()?;
    let mut x = initial_iterate(y, op, cfg)?;
    let prepared = op.prepare(y)?;
    for lambda in cfg.lambdas() {
        let z = denoiser.project(&x)?;
        x = op.dc_step_prepared(&prepared, &z, lambda)?;
    }
    Ok(x)
}

/// Everything the backward sweep needs from one forward pass.
#[derive(Debug, Clone)]
pub struct UnrollTape {
    lambdas: Vec<f64>,
    x0: Image,
    /// `x_1 .. x_K`.
    iterates: Vec<Image>,
    /// `z_0 .. z_{K-1}`.
    projections: Vec<Image>,
    records: Vec<ActivationRecord>,
    widths: Vec<usize>,
}

impl UnrollTape {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn initial(&self) -> &Image {
        &self.x0
    }

    pub fn iterates(&self) -> &[Image] {
        &self.iterates
    }

    pub fn projections(&self) -> &[Image] {
        &self.projections
    }

    pub fn output(&self) -> &Image {
        self.iterates.last().unwrap_or(&self.x0)
    }

    /// Re-runs the recorded schedule from the recorded initial iterate.
    pub fn replay(&self, y: &Image, op: &ForwardOperator, params: &DenoiserParams) -> Result<Image> {
        if params.widths() != self.widths.as_slice() {
            return Err(Error::TapeMismatch("tape was recorded with a different architecture".into()));
        }
        let prepared = op.prepare(y)?;
        let mut x = self.x0.clone();
        for &lambda in &self.lambdas {
            let z = params.project(&x)?;
            x = op.dc_step_prepared(&prepared, &z, lambda)?;
        }
        Ok(x)
    }
}

pub fn synthesize_with_tape(
    y: &Image,
    op: &ForwardOperator,
    params: &DenoiserParams,
    cfg: &UnrollConfig,
) -> Result<(Image, UnrollTape)> {
    cfg.validate()?;
    let lambdas = cfg.lambdas();
    let x0 = initial_iterate(y, op, cfg)?;
    let prepared = op.prepare(y)?;
    let mut iterates = Vec::with_capacity(lambdas.len());
    let mut projections = Vec::with_capacity(lambdas.len());
    let mut records = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let (z, record) = denoise_forward(params, iterates.last().unwrap_or(&x0))?;
        iterates.push(op.dc_step_prepared(&prepared, &z, lambda)?);
        projections.push(z);
        records.push(record);
    }
    let tape = UnrollTape {
        lambdas,
        x0,
        iterates,
        projections,
        records,
        widths: params.widths().to_vec(),
    };
    Ok((tape.output().clone(), tape))
}

/// Gradient of `⟨loss_grad, x_K⟩` with respect to the shared weights,
/// summed over unrolls. The gradient stops at the initial iterate.
pub fn backprop_unrolls(
    tape: &UnrollTape,
    op: &ForwardOperator,
    params: &DenoiserParams,
    loss_grad: &Image,
    mode: DcGradient,
) -> Result<DenoiserParams> {
    if params.widths() != tape.widths.as_slice() {
        return Err(Error::TapeMismatch("tape was recorded with a different architecture".into()));
    }
    if loss_grad.size() != tape.x0.size() {
        return Err(Error::TapeMismatch(format!(
            "loss gradient is {}x{} but the tape is {}x{}",
            loss_grad.size(),
            loss_grad.size(),
            tape.x0.size(),
            tape.x0.size()
        )));
    }
    let mut grads = params.zeros_like();
    let mut g_x = loss_grad.clone();
    for k in (0..tape.len()).rev() {
        let g_z = match mode {
            DcGradient::Exact => op.dc_step_grad_z(&g_x, tape.lambdas[k])?,
            DcGradient::StraightThrough => g_x,
        };
        let (g_p, g_prev) = denoise_backward(params, &tape.records[k], &g_z)?;
        grads.add_scaled(&g_p, 1.0);
        g_x = g_prev;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::BaselineDenoiser;
    use crate::image::{fft2, ifft2, FrequencyGrid};
    use crate::mtf::{sample_on_grid, KernelMtfProfile, TransferFilter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, dfov: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, dfov, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_params(seed: u64) -> DenoiserParams {
        let mut p = DenoiserParams::zeros(&crate::denoiser::DEFAULT_WIDTHS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        p
    }

    fn positive_op(n: usize, dfov: f64) -> ForwardOperator {
        let grid = FrequencyGrid::new(n, dfov).unwrap();
        let profile = KernelMtfProfile::smooth_gaussian(0.6 * grid.nyquist(), 2.0).unwrap();
        ForwardOperator::new(sample_on_grid(&profile, grid))
    }

    #[test]
    fn default_schedule_is_the_decimal_sequence() {
        assert_eq!(UnrollConfig::default().lambdas(), vec![0.5, 0.45, 0.405, 0.3645, 0.32805]);
        let cfg = UnrollConfig {
            decay_mode: DecayMode::PerEpoch,
            epoch: 2,
            unrolls: 3,
            ..UnrollConfig::default()
        };
        assert_eq!(cfg.lambdas(), vec![0.405; 3]);
        let long = UnrollConfig {
            unrolls: 40,
            ..UnrollConfig::default()
        };
        for (k, l) in long.lambdas().into_iter().enumerate() {
            let exact = 0.5 * 0.9f64.powi(k as i32);
            assert!((l - exact).abs() <= 5e-15 * exact);
        }
    }

    #[test]
    fn zero_unrolls_is_the_initializer() {
        let op = positive_op(16, 10.0);
        let y = random_image(16, 10.0, 1);
        let cfg = UnrollConfig {
            unrolls: 0,
            ..UnrollConfig::default()
        };
        let out = synthesize(&y, &op, &random_params(2), &cfg).unwrap();
        assert_eq!(out, op.tikhonov_init(&y, 0.5).unwrap());
        let (_, tape) = synthesize_with_tape(&y, &op, &random_params(2), &cfg).unwrap();
        assert!(tape.is_empty());
        let g = backprop_unrolls(&tape, &op, &random_params(2), &y, DcGradient::Exact).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_filter_steps_follow_scalar_recursion() {
        let grid = FrequencyGrid::new(16, 10.0).unwrap();
        let op = ForwardOperator::new(TransferFilter::identity(grid));
        let y = random_image(16, 10.0, 3);
        let params = random_params(4);
        let (out, tape) = synthesize_with_tape(&y, &op, &params, &UnrollConfig::default()).unwrap();
        let mut x = y.scaled(1.0 / 1.5).unwrap();
        assert!(tape.initial().relative_l2(&x) < 1e-14);
        for (k, &l) in tape.lambdas().iter().enumerate() {
            let z = params.project(&x).unwrap();
            x = y.add_scaled(&z, l).unwrap().scaled(1.0 / (1.0 + l)).unwrap();
            assert!(tape.iterates()[k].relative_l2(&x) < 1e-12);
        }
        assert!(out.relative_l2(&x) < 1e-12);
    }

    #[test]
    fn identity_projection_approaches_exact_deconvolution() {
        let n = 32;
        let op = positive_op(n, 10.0);
        let y = random_image(n, 10.0, 5);
        let mut spec = fft2(&y);
        for (c, l) in spec.data_mut().iter_mut().zip(op.filter().values()) {
            *c /= *l;
        }
        let exact = ifft2(&spec, 10.0).unwrap();
        let cfg = UnrollConfig {
            unrolls: 20,
            ..UnrollConfig::default()
        };
        let mut x = op.tikhonov_init(&y, cfg.lambda0).unwrap();
        let mut dist = x.relative_l2(&exact);
        for l in cfg.lambdas() {
            x = op.dc_step(&y, &x, l).unwrap();
            let d = x.relative_l2(&exact);
            assert!(d < dist);
            dist = d;
        }
        let out = synthesize(&y, &op, &BaselineDenoiser::Identity, &cfg).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn tape_replay_and_recompute_are_bitwise() {
        let op = positive_op(16, 5.0);
        let y = random_image(16, 5.0, 6);
        let params = random_params(7);
        let cfg = UnrollConfig::default();
        let (out, tape) = synthesize_with_tape(&y, &op, &params, &cfg).unwrap();
        assert_eq!(tape.len(), 5);
        assert_eq!(tape.replay(&y, &op, &params).unwrap(), out);
        assert_eq!(synthesize(&y, &op, &params, &cfg).unwrap(), out);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let n = 8;
        let op = positive_op(n, 10.0);
        let y = random_image(n, 10.0, 8);
        let u = random_image(n, 10.0, 9);
        let params = random_params(10);
        let cfg = UnrollConfig {
            unrolls: 2,
            ..UnrollConfig::default()
        };
        let f = |p: &DenoiserParams| synthesize(&y, &op, p, &cfg).unwrap().dot(&u);
        let (_, tape) = synthesize_with_tape(&y, &op, &params, &cfg).unwrap();
        let g = backprop_unrolls(&tape, &op, &params, &u, DcGradient::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..30 {
            let k = rng.random_range(0..params.num_params());
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.set(k, params.get(k) + h);
            minus.set(k, params.get(k) - h);
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = g.get(k);
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-4), "param {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn backprop_is_linear_in_the_loss_gradient() {
        let op = positive_op(8, 10.0);
        let y = random_image(8, 10.0, 12);
        let u = random_image(8, 10.0, 13);
        let params = random_params(14);
        let (_, tape) = synthesize_with_tape(&y, &op, &params, &UnrollConfig::default()).unwrap();
        let g1 = backprop_unrolls(&tape, &op, &params, &u, DcGradient::Exact).unwrap();
        let g2 = backprop_unrolls(&tape, &op, &params, &u.scaled(2.0).unwrap(), DcGradient::Exact).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn straight_through_differs_from_exact() {
        let op = positive_op(8, 10.0);
        let y = random_image(8, 10.0, 15);
        let params = random_params(16);
        let (_, tape) = synthesize_with_tape(&y, &op, &params, &UnrollConfig::default()).unwrap();
        let exact = backprop_unrolls(&tape, &op, &params, &y, DcGradient::Exact).unwrap();
        let st = backprop_unrolls(&tape, &op, &params, &y, DcGradient::StraightThrough).unwrap();
        assert!(exact != st);
        assert!(st.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_configs_rejected() {
        let op = positive_op(8, 10.0);
        let y = random_image(8, 10.0, 17);
        for cfg in [
            UnrollConfig {
                lambda0: 0.0,
                ..UnrollConfig::default()
            },
            UnrollConfig {
                decay: 1.5,
                ..UnrollConfig::default()
            },
        ] {
            assert!(synthesize(&y, &op, &BaselineDenoiser::Identity, &cfg).is_err());
        }
        let other = random_image(16, 10.0, 18);
        assert!(matches!(
            synthesize(&other, &op, &BaselineDenoiser::Identity, &UnrollConfig::default()),
            Err(Error::SizeMismatch { .. })
        ));
    }
}
