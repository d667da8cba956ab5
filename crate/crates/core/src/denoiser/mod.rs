//! The projection step `z = x + CNN(x)`: a small residual convolutional
//! network with hand-written gradients, plus untrained baselines.

mod checkpoint;
mod conv;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{fft2, ifft2, Image};
use conv::{conv_forward, conv_input_grad, conv_weight_grad, pad, pad_relu, unpad_adjoint, K};

/// Anything that can serve as the projection step of the unrolled solver.
pub trait Projector {
    fn project(&self, x: &Image) -> Result<Image>;
}

/// One 3×3 convolution; weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * in_ch * K * K],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Weights of the residual CNN. Hidden layers use a rectifier, the last
/// layer is linear, and the network output is added to its input.
///
/// The same type holds parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    widths: Vec<usize>,
    layers: Vec<ConvLayer>,
}

pub const DEFAULT_WIDTHS: [usize; 4] = [1, 16, 16, 1];

/// Smallest image side the network accepts.
pub const MIN_SIZE: usize = 8;

impl DenoiserParams {
    /// All-zero parameters for a channel chain such as `[1, 16, 16, 1]`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 1 || widths[widths.len() - 1] != 1 || widths.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "channel widths must start and end with 1 and be positive, got {widths:?}"
            )));
        }
        let layers = widths.windows(2).map(|w| ConvLayer::zeros(w[0], w[1])).collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))` for
    /// hidden layers, zero biases, and a zero final layer so the network
    /// starts as the identity map. Drawn from `ChaCha8Rng::seed_from_u64(seed)`
    /// layer by layer in storage order.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = params.layers.len() - 1;
        for layer in &mut params.layers[..last] {
            let bound = (6.0 / (layer.in_ch * K * K) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn default_init(seed: u64) -> Self {
        Self::init(&DEFAULT_WIDTHS, seed).expect("default widths are valid")
    }

    /// Rebuilds parameters from explicit layers, validating the chain.
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        let mut widths = vec![layers.first().map_or(0, |l| l.in_ch)];
        for l in &layers {
            if l.in_ch != *widths.last().unwrap() {
                return Err(Error::ShapeMismatch("layer channels do not chain".into()));
            }
            if l.weights.len() != l.out_ch * l.in_ch * K * K || l.bias.len() != l.out_ch {
                return Err(Error::ShapeMismatch("layer arrays have the wrong length".into()));
            }
            widths.push(l.out_ch);
        }
        let params = Self::zeros(&widths)?;
        let params = Self { layers, ..params };
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::num_params).sum()
    }

    /// Parameters in checkpoint order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths).expect("widths already validated")
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.widths == other.widths
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn get(&self, index: usize) -> f64 {
        *self.iter().nth(index).expect("parameter index out of range")
    }

    pub fn set(&mut self, index: usize, value: f64) {
        *self.iter_mut().nth(index).expect("parameter index out of range") = value;
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    size: usize,
    widths: Vec<usize>,
    /// Padded input of every layer.
    padded_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer.
    pre_activations: Vec<Vec<f64>>,
}

impl ActivationRecord {
    pub fn size(&self) -> usize {
        self.size
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < MIN_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "denoiser needs images of at least {MIN_SIZE}x{MIN_SIZE}, got {n}x{n}"
        )));
    }
    Ok(())
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Tape-free forward pass on reused buffers.
fn infer(params: &DenoiserParams, x: &Image) -> Result<Image> {
    let n = x.size();
    check_size(n)?;
    let last = params.layers.len() - 1;
    SCRATCH.with(|cell| {
        let (padded, out) = &mut *cell.borrow_mut();
        pad(1, n, x.pixels(), padded);
        for (l, layer) in params.layers.iter().enumerate() {
            out.resize(layer.out_ch * n * n, 0.0);
            conv_forward(padded, layer.in_ch, n, &layer.weights, &layer.bias, layer.out_ch, out);
            if l < last {
                pad_relu(layer.out_ch, n, out, padded);
            }
        }
        let z: Vec<f64> = x.pixels().iter().zip(out.iter()).map(|(a, b)| a + b).collect();
        x.with_pixels(z)
    })
}

/// `z = x + CNN(x)` together with the record needed for [`denoise_backward`].
pub fn denoise_forward(params: &DenoiserParams, x: &Image) -> Result<(Image, ActivationRecord)> {
    let mut tape = ActivationRecord {
        size: x.size(),
        widths: params.widths.clone(),
        padded_inputs: Vec::with_capacity(params.layers.len()),
        pre_activations: Vec::with_capacity(params.layers.len()),
    };
    let n = x.size();
    check_size(n)?;
    let last = params.layers.len() - 1;
    let mut padded = Vec::new();
    pad(1, n, x.pixels(), &mut padded);
    let mut out = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut pre = vec![0.0; layer.out_ch * n * n];
        conv_forward(&padded, layer.in_ch, n, &layer.weights, &layer.bias, layer.out_ch, &mut pre);
        let mut next = Vec::new();
        if l < last {
            pad_relu(layer.out_ch, n, &pre, &mut next);
        } else {
            out = pre.clone();
        }
        tape.padded_inputs.push(std::mem::replace(&mut padded, next));
        tape.pre_activations.push(pre);
    }
    let z: Vec<f64> = x.pixels().iter().zip(&out).map(|(a, b)| a + b).collect();
    Ok((x.with_pixels(z)?, tape))
}

/// Gradients of `⟨upstream, z⟩` with respect to the parameters and to `x`.
///
/// The rectifier derivative at exactly 0 is taken to be 0.
pub fn denoise_backward(
    params: &DenoiserParams,
    tape: &ActivationRecord,
    upstream: &Image,
) -> Result<(DenoiserParams, Image)> {
    let n = tape.size;
    if tape.widths != params.widths || tape.pre_activations.len() != params.layers.len() {
        return Err(Error::TapeMismatch("tape was recorded with a different architecture".into()));
    }
    if upstream.size() != n {
        return Err(Error::TapeMismatch(format!(
            "upstream is {}x{} but the tape is {n}x{n}",
            upstream.size(),
            upstream.size()
        )));
    }
    let mut grads = params.zeros_like();
    let last = params.layers.len() - 1;
    // gradient with respect to the current layer's (post-activation) output
    let mut g_out = upstream.pixels().to_vec();
    let mut g_pad = Vec::new();
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let pre = &tape.pre_activations[l];
        let g_pre: Vec<f64> = if l < last {
            g_out.iter().zip(pre).map(|(g, &p)| if p > 0.0 { *g } else { 0.0 }).collect()
        } else {
            g_out
        };
        let gl = &mut grads.layers[l];
        for o in 0..layer.out_ch {
            gl.bias[o] = g_pre[o * n * n..(o + 1) * n * n].iter().sum();
        }
        conv_weight_grad(&tape.padded_inputs[l], layer.in_ch, n, &g_pre, layer.out_ch, &mut gl.weights);
        g_pad.resize(layer.in_ch * (n + 2) * (n + 2), 0.0);
        conv_input_grad(&layer.weights, layer.in_ch, n, &g_pre, layer.out_ch, &mut g_pad);
        g_out = vec![0.0; layer.in_ch * n * n];
        unpad_adjoint(layer.in_ch, n, &g_pad, &mut g_out);
    }
    let grad_x: Vec<f64> = upstream.pixels().iter().zip(&g_out).map(|(u, g)| u + g).collect();
    Ok((grads, upstream.with_pixels(grad_x)?))
}

impl Projector for DenoiserParams {
    fn project(&self, x: &Image) -> Result<Image> {
        infer(self, x)
    }
}

/// Untrained plug-and-play projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineDenoiser {
    Identity,
    /// Spectral Gaussian low-pass with the given standard deviation in pixels.
    Gaussian { sigma_px: f64 },
}

pub fn baseline_denoiser(kind: BaselineDenoiser, x: &Image) -> Result<Image> {
    match kind {
        BaselineDenoiser::Identity => Ok(x.clone()),
        BaselineDenoiser::Gaussian { sigma_px } => {
            if !(sigma_px.is_finite() && sigma_px > 0.0) {
                return Err(Error::InvalidParameter(format!("sigma_px must be > 0, got {sigma_px}")));
            }
            let grid = x.grid();
            let n = x.size() as f64;
            let axial: Vec<f64> = (0..x.size())
                .map(|k| {
                    let f = grid.signed_index(k) / n;
                    (-2.0 * (std::f64::consts::PI * sigma_px * f).powi(2)).exp()
                })
                .collect();
            let mut spec = fft2(x);
            let size = x.size();
            for (i, c) in spec.data_mut().iter_mut().enumerate() {
                *c *= axial[i / size] * axial[i % size];
            }
            ifft2(&spec, x.dfov_cm())
        }
    }
}

impl Projector for BaselineDenoiser {
    fn project(&self, x: &Image) -> Result<Image> {
        baseline_denoiser(*self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, 10.0, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_params(seed: u64) -> DenoiserParams {
        let mut p = DenoiserParams::zeros(&DEFAULT_WIDTHS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        p
    }

    #[test]
    fn zero_params_are_identity() {
        let p = DenoiserParams::zeros(&DEFAULT_WIDTHS).unwrap();
        let x = random_image(16, 1);
        let (z, _) = denoise_forward(&p, &x).unwrap();
        assert_eq!(z, x);
        // default init has a zero last layer
        let (z, _) = denoise_forward(&DenoiserParams::default_init(3), &x).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn output_size_matches_input() {
        let p = random_params(2);
        for n in [8, 64, 512] {
            let x = random_image(n, n as u64);
            assert_eq!(p.project(&x).unwrap().size(), n);
        }
    }

    #[test]
    fn single_layer_average_matches_direct_convolution() {
        let layer = ConvLayer {
            in_ch: 1,
            out_ch: 1,
            weights: vec![1.0 / 9.0; 9],
            bias: vec![0.25],
        };
        let p = DenoiserParams::from_layers(vec![layer]).unwrap();
        let n = 12;
        let x = random_image(n, 4);
        let z = p.project(&x).unwrap();
        let sym = |k: isize| -> usize { k.clamp(0, n as isize - 1) as usize };
        for r in 0..n {
            for c in 0..n {
                let mut avg = 0.0;
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        avg += x.get(sym(r as isize + dr), sym(c as isize + dc)) / 9.0;
                    }
                }
                let expected = x.get(r, c) + avg + 0.25;
                assert!((z.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = random_params(5);
        let x = random_image(8, 6);
        let (_, tape) = denoise_forward(&p, &x).unwrap();
        let (g, gx) = denoise_backward(&p, &tape, &Image::zeros(8, 10.0).unwrap()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_rectifiers_leave_only_the_residual_path() {
        let mut p = DenoiserParams::zeros(&DEFAULT_WIDTHS).unwrap();
        for l in 0..2 {
            p.layers_mut()[l].bias.iter_mut().for_each(|b| *b = -1.0);
        }
        let x = random_image(8, 7);
        let u = random_image(8, 8);
        let (_, tape) = denoise_forward(&p, &x).unwrap();
        let (_, gx) = denoise_backward(&p, &tape, &u).unwrap();
        assert_eq!(gx, u);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let n = 8;
        let p = random_params(9);
        let x = random_image(n, 10);
        let u = random_image(n, 11);
        let objective = |p: &DenoiserParams, x: &Image| p.project(x).unwrap().dot(&u);
        let (_, tape) = denoise_forward(&p, &x).unwrap();
        let (g, gx) = denoise_backward(&p, &tape, &u).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let k = rng.random_range(0..p.num_params());
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus.set(k, p.get(k) + h);
            minus.set(k, p.get(k) - h);
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            let an = g.get(k);
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "param {k}: fd {fd} vs {an}");
        }
        for k in [0, 9, 27, 63] {
            let mut px = x.pixels().to_vec();
            px[k] += h;
            let xp = x.with_pixels(px.clone()).unwrap();
            px[k] -= 2.0 * h;
            let xm = x.with_pixels(px).unwrap();
            let fd = (objective(&p, &xp) - objective(&p, &xm)) / (2.0 * h);
            let an = gx.pixels()[k];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "pixel {k}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn tape_mismatch_detected() {
        let p = random_params(13);
        let (_, tape) = denoise_forward(&p, &random_image(8, 14)).unwrap();
        assert!(matches!(
            denoise_backward(&p, &tape, &random_image(16, 15)),
            Err(Error::TapeMismatch(_))
        ));
        let other = DenoiserParams::zeros(&[1, 4, 1]).unwrap();
        assert!(matches!(
            denoise_backward(&other, &tape, &random_image(8, 15)),
            Err(Error::TapeMismatch(_))
        ));
    }

    #[test]
    fn baselines() {
        let x = random_image(32, 16);
        assert_eq!(baseline_denoiser(BaselineDenoiser::Identity, &x).unwrap(), x);
        let c = Image::filled(32, 10.0, 4.0).unwrap();
        let g = baseline_denoiser(BaselineDenoiser::Gaussian { sigma_px: 2.0 }, &c).unwrap();
        assert!(g.pixels().iter().all(|&p| (p - 4.0).abs() < 1e-12));
        assert!(baseline_denoiser(BaselineDenoiser::Gaussian { sigma_px: 0.0 }, &c).is_err());
    }

    #[test]
    fn gaussian_impulse_response_is_sampled_gaussian() {
        let n = 64;
        let s = 2.0;
        let imp = Image::from_fn(n, 10.0, |r, c| if r == n / 2 && c == n / 2 { 1.0 } else { 0.0 }).unwrap();
        let out = baseline_denoiser(BaselineDenoiser::Gaussian { sigma_px: s }, &imp).unwrap();
        for r in 0..n {
            for c in 0..n {
                let d2 = ((r as f64 - 32.0).powi(2) + (c as f64 - 32.0).powi(2)) / (2.0 * s * s);
                let expected = (-d2).exp() / (2.0 * std::f64::consts::PI * s * s);
                assert!((out.get(r, c) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_widths_rejected() {
        assert!(DenoiserParams::zeros(&[1]).is_err());
        assert!(DenoiserParams::zeros(&[2, 4, 1]).is_err());
        assert!(DenoiserParams::zeros(&[1, 0, 1]).is_err());
    }
}
