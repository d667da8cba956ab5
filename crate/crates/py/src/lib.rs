//! Python bindings: images, kernel profiles, the forward operator, the
//! projection network, unrolled synthesis and MTF estimation.

use ksynth::denoiser::{load_checkpoint, save_checkpoint, DenoiserParams, Projector, DEFAULT_WIDTHS};
use ksynth::eval::{estimate_mtf as estimate, image_metrics as metrics, Window};
use ksynth::ksim::{load_ksim, save_ksim};
use ksynth::unroll::UnrollConfig;
use ksynth::{direct_ratio_synthesis, ratio_filter, Error, ForwardOperator, FrequencyGrid, Image, KernelMtfProfile};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::NonRealResult { .. }
        | Error::DivisionBlowup { .. }
        | Error::SingularSystem(_)
        | Error::Diverged { .. }) => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ksynth::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Square slice with its display field of view in cm.
#[pyclass(name = "Image", module = "ksynth_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage(pub Image);

#[pymethods]
impl PyImage {
    /// `pixels` is row-major, `size * size` long.
    #[new]
    fn new(size: usize, dfov_cm: f64, pixels: Vec<f64>) -> PyResult<Self> {
        Image::new(size, dfov_cm, pixels).py().map(Self)
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    #[getter]
    fn dfov_cm(&self) -> f64 {
        self.0.dfov_cm()
    }

    #[getter]
    fn pixel_spacing_cm(&self) -> f64 {
        self.0.pixel_spacing_cm()
    }

    fn pixels(&self) -> Vec<f64> {
        self.0.pixels().to_vec()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.pixels().chunks(self.0.size()).map(<[f64]>::to_vec).collect()
    }

    fn sum(&self) -> f64 {
        self.0.sum()
    }

    fn relative_l2(&self, reference: &PyImage) -> f64 {
        self.0.relative_l2(&reference.0)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_ksim(path, &self.0).py()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_ksim(path).py().map(Self)
    }

    fn __repr__(&self) -> String {
        format!("Image(size={}, dfov_cm={})", self.0.size(), self.0.dfov_cm())
    }
}

/// Radial MTF of a reconstruction kernel.
#[pyclass(name = "KernelMtfProfile", module = "ksynth_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyProfile(pub KernelMtfProfile);

#[pymethods]
impl PyProfile {
    #[staticmethod]
    fn smooth_gaussian(f0: f64, p: f64) -> PyResult<Self> {
        KernelMtfProfile::smooth_gaussian(f0, p).py().map(Self)
    }

    #[staticmethod]
    fn sharp_boosted(f0: f64, p: f64, beta: f64, f_beta: f64) -> PyResult<Self> {
        KernelMtfProfile::sharp_boosted(f0, p, beta, f_beta).py().map(Self)
    }

    #[staticmethod]
    fn tabulated(samples: Vec<(f64, f64)>) -> PyResult<Self> {
        KernelMtfProfile::tabulated(samples).py().map(Self)
    }

    #[staticmethod]
    fn default_input() -> Self {
        Self(KernelMtfProfile::default_input())
    }

    #[staticmethod]
    fn default_target() -> Self {
        Self(KernelMtfProfile::default_target())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        KernelMtfProfile::from_json_str(text).py().map(Self)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    /// MTF at `f` lp/cm.
    fn __call__(&self, f: f64) -> PyResult<f64> {
        self.0.eval(f).py()
    }
}

/// `H = Fᵀ Λ F` on one grid.
#[pyclass(name = "ForwardOperator", module = "ksynth_py")]
pub struct PyOperator(ForwardOperator);

#[pymethods]
impl PyOperator {
    #[new]
    #[pyo3(signature = (input, target, size, dfov_cm, eps = 1e-3))]
    fn new(input: &PyProfile, target: &PyProfile, size: usize, dfov_cm: f64, eps: f64) -> PyResult<Self> {
        let grid = FrequencyGrid::new(size, dfov_cm).py()?;
        ForwardOperator::for_kernels(&input.0, &target.0, grid, eps).py().map(Self)
    }

    fn filter(&self) -> Vec<f64> {
        self.0.filter().values().to_vec()
    }

    fn apply_h(&self, x: &PyImage) -> PyResult<PyImage> {
        self.0.apply_h(&x.0).py().map(PyImage)
    }

    fn apply_h_adjoint(&self, y: &PyImage) -> PyResult<PyImage> {
        self.0.apply_h_adjoint(&y.0).py().map(PyImage)
    }

    fn tikhonov_init(&self, y: &PyImage, lambda0: f64) -> PyResult<PyImage> {
        self.0.tikhonov_init(&y.0, lambda0).py().map(PyImage)
    }

    fn dc_step(&self, y: &PyImage, z: &PyImage, lambda_k: f64) -> PyResult<PyImage> {
        self.0.dc_step(&y.0, &z.0, lambda_k).py().map(PyImage)
    }
}

/// Weights of the residual projection network.
#[pyclass(name = "DenoiserParams", module = "ksynth_py")]
pub struct PyParams(DenoiserParams);

#[pymethods]
impl PyParams {
    /// Fan-in scaled init; the last layer starts at zero (identity map).
    #[staticmethod]
    #[pyo3(signature = (seed, widths = None))]
    fn init(seed: u64, widths: Option<Vec<usize>>) -> PyResult<Self> {
        DenoiserParams::init(&widths.unwrap_or(DEFAULT_WIDTHS.to_vec()), seed)
            .py()
            .map(Self)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).py().map(|(p, _)| Self(p))
    }

    #[pyo3(signature = (path, epoch = 0))]
    fn save(&self, path: &str, epoch: usize) -> PyResult<()> {
        save_checkpoint(path, &self.0, epoch).py()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.0.widths().to_vec()
    }

    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    fn project(&self, x: &PyImage) -> PyResult<PyImage> {
        self.0.project(&x.0).py().map(PyImage)
    }
}

/// Unrolled model-based synthesis: Tikhonov start, then `unrolls` rounds of
/// network projection and data consistency.
#[pyfunction]
#[pyo3(signature = (y, op, params, unrolls = 5, lambda0 = 0.5, decay = 0.9))]
fn synthesize(y: &PyImage, op: &PyOperator, params: &PyParams, unrolls: usize, lambda0: f64, decay: f64) -> PyResult<PyImage> {
    let cfg = UnrollConfig {
        unrolls,
        lambda0,
        decay,
        ..UnrollConfig::default()
    };
    ksynth::unroll::synthesize(&y.0, &op.0, &params.0, &cfg).py().map(PyImage)
}

/// Per-frequency division by the input/target MTF ratio.
#[pyfunction]
#[pyo3(signature = (y, input, target, eps = 1e-3))]
fn direct_synthesis(y: &PyImage, input: &PyProfile, target: &PyProfile, eps: f64) -> PyResult<PyImage> {
    let ratio = ratio_filter(&input.0, &target.0, y.0.grid(), eps).py()?;
    direct_ratio_synthesis(&y.0, &ratio).py().map(PyImage)
}

#[pyfunction]
fn shepp_logan(n: usize, dfov_cm: f64) -> PyResult<PyImage> {
    ksynth::phantom::shepp_logan(n, dfov_cm).py().map(PyImage)
}

#[pyfunction]
#[pyo3(signature = (n, dfov_cm, amplitude = 1000.0))]
fn wire_phantom(n: usize, dfov_cm: f64, amplitude: f64) -> PyResult<PyImage> {
    ksynth::phantom::wire_phantom(n, dfov_cm, amplitude).py().map(PyImage)
}

/// Returns `[(lp_per_cm, mtf), ...]`.
#[pyfunction]
#[pyo3(signature = (wire, roi_half_width = 16, hann = false))]
fn estimate_mtf(wire: &PyImage, roi_half_width: usize, hann: bool) -> PyResult<Vec<(f64, f64)>> {
    let window = if hann { Window::Hann } else { Window::None };
    estimate(&wire.0, roi_half_width, window).py().map(|c| c.samples().to_vec())
}

/// `(mse, psnr, ssim)`.
#[pyfunction]
fn image_metrics(pred: &PyImage, target: &PyImage) -> PyResult<(f64, f64, f64)> {
    metrics(&pred.0, &target.0).py().map(|m| (m.mse, m.psnr, m.ssim))
}

#[pymodule]
fn ksynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(direct_synthesis, m)?)?;
    m.add_function(wrap_pyfunction!(shepp_logan, m)?)?;
    m.add_function(wrap_pyfunction!(wire_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mtf, m)?)?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_python_exception_kinds() {
        Python::initialize();
        Python::attach(|py| {
            assert!(to_py(Error::SingularSystem("x".into())).is_instance_of::<PyArithmeticError>(py));
            assert!(to_py(Error::InvalidParameter("x".into())).is_instance_of::<PyValueError>(py));
            let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
            assert!(to_py(Error::Io(io)).is_instance_of::<PyIOError>(py));
        });
    }

    #[test]
    fn module_exposes_synthesis() {
        Python::initialize();
        Python::attach(|py| {
            let module = pyo3::wrap_pymodule!(ksynth_py)(py);
            let m = module.bind(py);
            for name in ["Image", "KernelMtfProfile", "ForwardOperator", "DenoiserParams", "synthesize", "estimate_mtf"] {
                assert!(m.hasattr(name).unwrap(), "{name}");
            }
            let y = PyImage(ksynth::phantom::shepp_logan(32, 10.0).unwrap());
            let op = PyOperator::new(&PyProfile::default_input(), &PyProfile::default_target(), 32, 10.0, 1e-3).unwrap();
            let params = PyParams::init(1, None).unwrap();
            let out = synthesize(&y, &op, &params, 0, 0.5, 0.9).unwrap();
            assert_eq!(out.0, op.0.tikhonov_init(&y.0, 0.5).unwrap());
        });
    }
}
