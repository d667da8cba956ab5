//! Image-domain CT reconstruction-kernel synthesis that adapts to the
//! display field-of-view.
//!
//! A smooth-kernel slice `y` is modelled as `y = H x + n`, where `x` is the
//! sharp-kernel slice and `H = Fᵀ Λ F` multiplies every frequency by the
//! input-over-target MTF ratio sampled on the slice's own lp/cm grid. The
//! synthesis alternates a learned projection `z_k = CNN(x_k)` with the
//! closed-form data-consistency solve of `‖y − Hx‖² + λ_k‖x − z_k‖²`.

pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod forward;
pub mod image;
pub mod ksim;
pub mod mtf;
pub mod noise;
pub mod phantom;
pub mod unroll;

pub use error::{Error, Result};
pub use forward::{direct_ratio_synthesis, ForwardOperator};
pub use image::{fft2, ifft2, FrequencyGrid, Image, Spectrum};
pub use mtf::{ratio_filter, sample_on_grid, KernelMtfProfile, TransferFilter};
