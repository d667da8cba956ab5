//! The kernel-synthesis forward operator `H = Fᵀ Λ F` and its closed-form
//! solves.
//!
//! `H` maps a sharp-kernel image to the smooth-kernel image of the same
//! scene, so `Λ` is the input-over-target MTF ratio. Every solve below is a
//! pointwise division in the spectral domain.

use crate::error::{Error, Result};
use crate::image::{fft2, filter_real, ifft2, FrequencyGrid, Image, Spectrum};
use crate::mtf::{ratio_filter, KernelMtfProfile, TransferFilter};

/// Smallest filter value for which unregularized (`λ == 0`) solves are allowed.
pub const MIN_UNREGULARIZED_GAIN: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ForwardOperator {
    lambda: TransferFilter,
    lambda_sq: Vec<f64>,
    min_gain: f64,
}

/// `Λ ⊙ F y`, computed once per measured image and reused by every
/// data-consistency step.
#[derive(Debug, Clone)]
pub struct PreparedMeasurement {
    weighted: Spectrum,
    dfov_cm: f64,
}

impl ForwardOperator {
    pub fn new(lambda: TransferFilter) -> Self {
        debug_assert!({
            let n = lambda.grid().size();
            (0..n).all(|u| (0..n).all(|v| lambda.get(u, v) == lambda.get((n - u) % n, (n - v) % n)))
        });
        let lambda_sq = lambda.values().iter().map(|v| v * v).collect();
        let min_gain = lambda.min_value();
        Self {
            lambda,
            lambda_sq,
            min_gain,
        }
    }

    /// Operator that blurs a `target_mtf` image into an `input_mtf` image on
    /// `grid`: `Λ = M_i M_t / (M_t² + eps)`.
    pub fn for_kernels(
        input_mtf: &KernelMtfProfile,
        target_mtf: &KernelMtfProfile,
        grid: FrequencyGrid,
        eps: f64,
    ) -> Result<Self> {
        // ratio_filter divides by its first argument
        Ok(Self::new(ratio_filter(target_mtf, input_mtf, grid, eps)?))
    }

    pub fn filter(&self) -> &TransferFilter {
        &self.lambda
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.lambda.grid()
    }

    /// `y = H x`.
    pub fn apply_h(&self, x: &Image) -> Result<Image> {
        self.grid().matches(x)?;
        filter_real(x, self.lambda.values())
    }

    /// `Hᵀ y`. `Λ` is real and index-symmetric, so this is the same map as
    /// [`apply_h`](Self::apply_h).
    pub fn apply_h_adjoint(&self, y: &Image) -> Result<Image> {
        self.apply_h(y)
    }

    fn check_weight(&self, weight: f64, name: &str) -> Result<()> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {weight}")));
        }
        if weight == 0.0 && self.min_gain <= MIN_UNREGULARIZED_GAIN {
            return Err(Error::SingularSystem(format!(
                "{name} = 0 but the transfer filter drops to {:e}",
                self.min_gain
            )));
        }
        Ok(())
    }

    /// `(HᵀH + λ₀ I)⁻¹ Hᵀ y`.
    pub fn tikhonov_init(&self, y: &Image, lambda0: f64) -> Result<Image> {
        self.grid().matches(y)?;
        self.check_weight(lambda0, "lambda0")?;
        let gains: Vec<f64> = self
            .lambda
            .values()
            .iter()
            .zip(&self.lambda_sq)
            .map(|(l, l2)| l / (l2 + lambda0))
            .collect();
        filter_real(y, &gains)
    }

    pub fn prepare(&self, y: &Image) -> Result<PreparedMeasurement> {
        self.grid().matches(y)?;
        let mut weighted = fft2(y);
        for (c, &l) in weighted.data_mut().iter_mut().zip(self.lambda.values()) {
            *c *= l;
        }
        Ok(PreparedMeasurement {
            weighted,
            dfov_cm: y.dfov_cm(),
        })
    }

    /// Minimizer of `‖y − Hx‖² + λ‖x − z‖²`:
    /// `Fᵀ[(Λ F y + λ F z) / (Λ² + λ)]`.
    pub fn dc_step(&self, y: &Image, z: &Image, lambda_k: f64) -> Result<Image> {
        let prepared = self.prepare(y)?;
        self.dc_step_prepared(&prepared, z, lambda_k)
    }

    pub fn dc_step_prepared(&self, y: &PreparedMeasurement, z: &Image, lambda_k: f64) -> Result<Image> {
        self.grid().matches(z)?;
        self.check_weight(lambda_k, "lambda")?;
        let mut spec = fft2(z);
        for ((c, &w), &l2) in spec.data_mut().iter_mut().zip(y.weighted.data()).zip(&self.lambda_sq) {
            *c = (w + *c * lambda_k) / (l2 + lambda_k);
        }
        ifft2(&spec, y.dfov_cm)
    }

    /// Adjoint (equivalently Jacobian, the map is symmetric) of
    /// `z ↦ dc_step(y, z, λ)` applied to `upstream`: `Fᵀ[λ F u / (Λ² + λ)]`.
    pub fn dc_step_grad_z(&self, upstream: &Image, lambda_k: f64) -> Result<Image> {
        self.grid().matches(upstream)?;
        self.check_weight(lambda_k, "lambda")?;
        let gains: Vec<f64> = self.lambda_sq.iter().map(|l2| lambda_k / (l2 + lambda_k)).collect();
        filter_real(upstream, &gains)
    }
}

/// One-shot MTF-ratio kernel conversion: `Fᵀ(R ⊙ F y)`.
pub fn direct_ratio_synthesis(y: &Image, ratio: &TransferFilter) -> Result<Image> {
    ratio.grid().matches(y)?;
    filter_real(y, ratio.values())
}
