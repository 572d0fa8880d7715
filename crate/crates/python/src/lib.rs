//! Python bindings: cubes, degradation, the fusion network, training and
//! quality indices.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hsrnet::cube::{load_spectral_response, read_cube, write_cube};
use hsrnet::degradation::{simulate_pair, DegradationConfig};
use hsrnet::network::{count_parameters, forward, init_network};
use hsrnet::ops::gradcheck::{check_all, GradCheckOptions};
use hsrnet::synthetic::{rgb_response, synthetic_cube};
use hsrnet::trainer::{extract_patches, load_checkpoint, split_dataset, TrainConfig, TrainOutputs};
use hsrnet::{metrics, Error, NetworkParams, Variant};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// An H×W×S cube of f32 samples stored band-major.
#[pyclass(name = "HyperCube", module = "hsrnet_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyHyperCube {
    inner: hsrnet::HyperCube<f32>,
}

#[pymethods]
impl PyHyperCube {
    #[new]
    #[pyo3(signature = (height, width, bands, data, wavelengths=None))]
    fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        wavelengths: Option<Vec<f32>>,
    ) -> PyResult<Self> {
        let wl = wavelengths.unwrap_or_else(|| vec![0.0; bands]);
        let inner = hsrnet::HyperCube::new(height, width, bands, wl, data).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_cube(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn synthetic(height: usize, width: usize, bands: usize, seed: u64) -> Self {
        Self {
            inner: synthetic_cube(height, width, bands, seed),
        }
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_cube(&self.inner, path).map_err(to_py)
    }

    /// (height, width, bands)
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.height, self.inner.width, self.inner.bands)
    }

    #[getter]
    fn wavelengths(&self) -> Vec<f32> {
        self.inner.wavelengths.clone()
    }

    /// Flat samples in (band, row, col) order.
    fn data(&self) -> Vec<f32> {
        self.inner.data.clone()
    }

    fn at(&self, band: usize, row: usize, col: usize) -> PyResult<f32> {
        let c = &self.inner;
        if band >= c.bands || row >= c.height || col >= c.width {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(c.at(band, row, col))
    }

    /// Scales to a maximum of 1 and returns the divisor.
    fn normalize_max(&mut self) -> f64 {
        self.inner.normalize_max()
    }

    fn __repr__(&self) -> String {
        let (h, w, s) = self.shape();
        format!("HyperCube({h}×{w}×{s})")
    }
}

/// Row-normalized s×S spectral response.
#[pyclass(name = "SpectralResponse", module = "hsrnet_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PySpectralResponse {
    inner: hsrnet::SpectralResponse,
}

#[pymethods]
impl PySpectralResponse {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: hsrnet::SpectralResponse::from_rows(rows).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn identity(bands: usize) -> Self {
        Self {
            inner: hsrnet::SpectralResponse::identity(bands),
        }
    }

    /// Broad red/green/blue sensor sampled at `wavelengths` (nm).
    #[staticmethod]
    fn rgb(wavelengths: Vec<f32>) -> Self {
        Self {
            inner: rgb_response(&wavelengths),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf, wavelengths: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: load_spectral_response(path, &wavelengths).map_err(to_py)?,
        })
    }

    /// (msi_bands, hsi_bands)
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.out_bands, self.inner.in_bands)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.out_bands)
            .map(|j| self.inner.row(j).to_vec())
            .collect()
    }
}

/// Degrades a reference cube into its (LR-HSI, HR-MSI) pair.
#[pyfunction]
#[pyo3(signature = (cube, response, scale_factor=4, blur_sigma=0.5, blur_kernel_size=3))]
fn simulate(
    cube: &PyHyperCube,
    response: &PySpectralResponse,
    scale_factor: usize,
    blur_sigma: f64,
    blur_kernel_size: usize,
) -> PyResult<(PyHyperCube, PyHyperCube)> {
    let cfg = DegradationConfig {
        blur_kernel_size,
        blur_sigma,
        scale_factor,
    };
    let (lr, msi) = simulate_pair(&cube.inner, &response.inner, &cfg).map_err(to_py)?;
    Ok((PyHyperCube { inner: lr }, PyHyperCube { inner: msi }))
}

#[pyclass(name = "NetworkConfig", module = "hsrnet_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyNetworkConfig {
    inner: hsrnet::NetworkConfig,
}

#[pymethods]
impl PyNetworkConfig {
    #[new]
    #[pyo3(signature = (hsi_bands, msi_bands, feature_channels=None, num_blocks=None, variant="full", scale_factor=None))]
    fn new(
        hsi_bands: usize,
        msi_bands: usize,
        feature_channels: Option<usize>,
        num_blocks: Option<usize>,
        variant: &str,
        scale_factor: Option<usize>,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(to_py)?;
        let mut inner = hsrnet::NetworkConfig::new(hsi_bands, msi_bands).with_variant(variant);
        if let Some(f) = feature_channels {
            inner = inner.with_features(f);
        }
        if let Some(b) = num_blocks {
            inner.num_blocks = b;
        }
        if let Some(f) = scale_factor {
            inner.scale_factor = f;
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.as_str()
    }

    #[getter]
    fn feature_channels(&self) -> usize {
        self.inner.feature_channels
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.inner.num_blocks
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "NetworkConfig(hsi_bands={}, msi_bands={}, feature_channels={}, num_blocks={}, variant={:?})",
            c.hsi_bands, c.msi_bands, c.feature_channels, c.num_blocks, c.variant.as_str()
        )
    }
}

/// Network weights bound to their configuration.
#[pyclass(name = "Network", module = "hsrnet_py")]
pub struct PyNetwork {
    config: hsrnet::NetworkConfig,
    params: NetworkParams<f32>,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn init(config: &PyNetworkConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            config: config.inner.clone(),
            params: init_network(&config.inner, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, config: &PyNetworkConfig) -> PyResult<Self> {
        Ok(Self {
            config: config.inner.clone(),
            params: load_checkpoint(path, &config.inner).map_err(to_py)?.params,
        })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        count_parameters(&self.params)
    }

    /// Fuses an LR-HSI with an HR-MSI into an HR-HSI estimate.
    fn fuse(&self, lr: &PyHyperCube, msi: &PyHyperCube) -> PyResult<PyHyperCube> {
        let out = forward(
            &self.params,
            &self.config,
            &lr.inner.to_tensor(),
            &msi.inner.to_tensor(),
            false,
        )
        .map_err(to_py)?;
        let cube = hsrnet::HyperCube::from_tensor(&out.output, 0, lr.inner.wavelengths.clone())
            .map_err(to_py)?;
        Ok(PyHyperCube { inner: cube })
    }
}

/// Patch-based trainer over a set of reference cubes.
#[pyclass(name = "Trainer", module = "hsrnet_py")]
pub struct PyTrainer {
    inner: hsrnet::trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (cubes, response, config, iterations, patch_size=64, patch_stride=32, batch_size=32, learning_rate=1e-4, val_fraction=0.2, seed=0, checkpoint_every=1000))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        cubes: Vec<PyRef<'_, PyHyperCube>>,
        response: &PySpectralResponse,
        config: &PyNetworkConfig,
        iterations: usize,
        patch_size: usize,
        patch_stride: usize,
        batch_size: usize,
        learning_rate: f64,
        val_fraction: f64,
        seed: u64,
        checkpoint_every: usize,
    ) -> PyResult<Self> {
        let net = &config.inner;
        let tcfg = TrainConfig {
            patch_size,
            patch_stride,
            scale_factor: net.scale_factor,
            batch_size,
            iterations,
            learning_rate,
            val_fraction,
            seed,
            variant: net.variant,
            checkpoint_every,
            ..Default::default()
        };
        let degrade = DegradationConfig {
            scale_factor: net.scale_factor,
            ..Default::default()
        };
        let refs: Vec<hsrnet::HyperCube<f32>> = cubes.iter().map(|c| c.inner.clone()).collect();
        let data = extract_patches(&refs, &response.inner, &degrade, &tcfg).map_err(to_py)?;
        let (train, val) = split_dataset(&data, val_fraction, seed).map_err(to_py)?;
        let inner = hsrnet::trainer::Trainer::new(net, &tcfg, train, val).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// One optimizer step; returns the loss before the update.
    fn step(&mut self) -> PyResult<f64> {
        self.inner.step_once().map_err(to_py)
    }

    /// Runs the remaining iterations, checkpointing to `checkpoint` if given.
    #[pyo3(signature = (checkpoint=None))]
    fn run(&mut self, checkpoint: Option<PathBuf>) -> PyResult<()> {
        self.inner.run(&TrainOutputs { checkpoint }).map_err(to_py)
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step
    }

    /// Mean MSE over the validation split.
    fn validation_loss(&self) -> PyResult<f64> {
        self.inner
            .evaluate_loss(self.inner.val_set())
            .map_err(to_py)
    }

    /// (step, train_loss, val_loss or None) per recorded step.
    fn log(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.inner
            .log
            .iter()
            .map(|r| (r.step, r.train_loss, r.val_loss))
            .collect()
    }

    fn network(&self) -> PyNetwork {
        PyNetwork {
            config: self.inner.net.clone(),
            params: self.inner.params.clone(),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (reference, estimate, peak=1.0))]
fn psnr(reference: &PyHyperCube, estimate: &PyHyperCube, peak: f64) -> PyResult<f64> {
    metrics::psnr(&reference.inner, &estimate.inner, peak).map_err(to_py)
}

#[pyfunction]
fn sam(reference: &PyHyperCube, estimate: &PyHyperCube) -> PyResult<f64> {
    metrics::sam(&reference.inner, &estimate.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (reference, estimate, ratio=4.0))]
fn ergas(reference: &PyHyperCube, estimate: &PyHyperCube, ratio: f64) -> PyResult<f64> {
    metrics::ergas(&reference.inner, &estimate.inner, ratio).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (reference, estimate, peak=1.0))]
fn ssim(reference: &PyHyperCube, estimate: &PyHyperCube, peak: f64) -> PyResult<f64> {
    metrics::ssim(&reference.inner, &estimate.inner, peak).map_err(to_py)
}

/// All four indices as a dict.
#[pyfunction]
#[pyo3(signature = (reference, estimate, ratio=4.0))]
fn evaluate(
    reference: &PyHyperCube,
    estimate: &PyHyperCube,
    ratio: f64,
) -> PyResult<Vec<(&'static str, f64)>> {
    let r = metrics::report(&reference.inner, &estimate.inner, ratio).map_err(to_py)?;
    Ok(vec![
        ("psnr_db", r.psnr),
        ("sam_deg", r.sam),
        ("ergas", r.ergas),
        ("ssim", r.ssim),
    ])
}

/// Finite-difference check of every registered operator:
/// (name, max_rel_error, tolerance, passed).
#[pyfunction]
#[pyo3(signature = (seed=0, inject_fault=false))]
fn gradcheck(seed: u64, inject_fault: bool) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let options = GradCheckOptions {
        inject_fault,
        ..Default::default()
    };
    Ok(check_all(seed, &options)
        .map_err(to_py)?
        .into_iter()
        .map(|r| (r.op_name, r.max_rel_error, r.tolerance, r.passed))
        .collect())
}

#[pymodule]
fn hsrnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperCube>()?;
    m.add_class::<PySpectralResponse>()?;
    m.add_class::<PyNetworkConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(sam, m)?)?;
    m.add_function(wrap_pyfunction!(ergas, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
