//! Python bindings: tensors, the network, the loss, metrics and every CLI
//! command.

use std::path::PathBuf;

use agse_core::data::{PatchSpec, SegVolume};
use agse_core::gradcheck::Scope;
use agse_core::harness::{commands, Checkpoint, TrainConfig};
use agse_core::losses::{self, ClassWeights};
use agse_core::metrics;
use agse_core::net::{self, NetParams};
use agse_core::{npy, Rng, Shape5, Tensor5};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: agse_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for agse_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Dense `(n, z, h, w, c)` float64 tensor, channel fastest.
#[pyclass(name = "Tensor", module = "agse", frozen)]
struct PyTensor {
    inner: Tensor5,
}

fn shape5(s: [usize; 5]) -> Shape5 {
    Shape5::new(s[0], s[1], s[2], s[3], s[4])
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: [usize; 5], data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Tensor5::from_vec(shape5(shape), data).py()? })
    }

    #[staticmethod]
    fn zeros(shape: [usize; 5]) -> Self {
        Self { inner: Tensor5::zeros(shape5(shape)) }
    }

    #[staticmethod]
    #[pyo3(signature = (shape, std = 1.0, seed = 0))]
    fn normal(shape: [usize; 5], std: f64, seed: u64) -> Self {
        Self { inner: Tensor5::normal(shape5(shape), std, &mut Rng::new(seed)) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: npy::load_tensor(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        npy::save_tensor(&path, &self.inner).py()
    }

    #[getter]
    fn shape(&self) -> [usize; 5] {
        self.inner.shape().dims()
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn __len__(&self) -> usize {
        self.inner.data().len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape().dims())
    }
}

/// Training configuration in the flat `key = value` format.
#[pyclass(name = "TrainConfig", module = "agse", frozen)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TrainConfig::parse(text).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: TrainConfig::load(&path).py()? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn base_width(&self) -> usize {
        self.inner.net.base_width
    }

    #[getter]
    fn patch(&self) -> [usize; 3] {
        self.inner.net.patch
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn lr_at(&self, step: usize) -> f64 {
        self.inner.lr_at(step)
    }
}

/// Network parameters together with the configuration that shapes them.
#[pyclass(name = "Network", module = "agse", frozen)]
struct PyNetwork {
    config: TrainConfig,
    params: NetParams,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyTrainConfig, seed: u64) -> PyResult<Self> {
        let params = net::build(&config.inner.net, &mut Rng::new(seed)).py()?;
        Ok(Self { config: config.inner.clone(), params })
    }

    /// Loads a checkpoint directory or a training run directory.
    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        let (config, params) = Checkpoint::load_model(&path).py()?;
        Ok(Self { config, params })
    }

    fn param_count(&self) -> usize {
        net::param_count(&self.params)
    }

    fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Softmax probabilities for a `(n, z, h, w, 4)` input patch.
    #[pyo3(signature = (x, training = false, seed = 0))]
    fn forward(&self, py: Python<'_>, x: &PyTensor, training: bool, seed: u64) -> PyResult<PyTensor> {
        let out = py
            .detach(|| net::forward(&x.inner, &self.params, &self.config.net, training, &mut Rng::new(seed)))
            .py()?;
        Ok(PyTensor { inner: out.output })
    }

    /// Labels in {0, 1, 2, 4} for a probability tensor, as a flat z-major list.
    #[staticmethod]
    fn predict_labels(probs: &PyTensor) -> PyResult<Vec<u8>> {
        Ok(net::predict_labels(&probs.inner).py()?.data().to_vec())
    }
}

/// Weighted soft Dice loss and its gradient with respect to `p`.
#[pyfunction]
#[pyo3(signature = (p, g, weights = None))]
fn dice_loss(p: &PyTensor, g: &PyTensor, weights: Option<[f64; 4]>) -> PyResult<(f64, PyTensor)> {
    let w = weights.map_or_else(|| Ok(ClassWeights::default()), ClassWeights::new).py()?;
    let (loss, grad) = losses::dice_loss(&p.inner, &g.inner, &w).py()?;
    Ok((loss, PyTensor { inner: grad }))
}

#[pyfunction]
fn soft_dice_per_class(p: &PyTensor, g: &PyTensor) -> PyResult<[f64; 4]> {
    losses::soft_dice_per_class(&p.inner, &g.inner).py()
}

/// Per-region scores (ET, WT, TC) for flat z-major label volumes.
#[pyfunction]
#[pyo3(signature = (pred, truth, shape, spacing = [1.0; 3], case_id = "case"))]
fn score<'py>(
    py: Python<'py>,
    pred: Vec<u8>,
    truth: Vec<u8>,
    shape: [usize; 3],
    spacing: [f64; 3],
    case_id: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let pred = SegVolume::new(shape, pred).py()?;
    let truth = SegVolume::new(shape, truth).py()?;
    metrics::score_case(case_id, &pred, &truth, spacing)
        .py()?
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("case_id", r.case_id)?;
            d.set_item("region", r.region.name())?;
            d.set_item("dice", r.dice)?;
            d.set_item("sensitivity", r.sensitivity)?;
            d.set_item("specificity", r.specificity)?;
            d.set_item("hd95", r.hd95)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (n, out, shape = [32; 3], difficulty = 0.3, seed = 0))]
fn phantom_gen(n: usize, out: PathBuf, shape: [usize; 3], difficulty: f64, seed: u64) -> PyResult<Vec<PathBuf>> {
    commands::phantom_gen(n, shape, difficulty, seed, &out).py()
}

#[pyfunction]
#[pyo3(signature = (data, out, config = None))]
fn preprocess(data: PathBuf, out: PathBuf, config: Option<&PyTrainConfig>) -> PyResult<usize> {
    let cfg = config.map_or_else(TrainConfig::default, |c| c.inner.clone());
    let spec = PatchSpec::new(cfg.net.patch, cfg.stride).py()?;
    commands::preprocess(&data, &out, &spec).py()
}

/// Trains (or resumes) and returns the run report text.
#[pyfunction]
#[pyo3(signature = (config, data, out, checkpoint = None))]
fn train(py: Python<'_>, config: &PyTrainConfig, data: PathBuf, out: PathBuf, checkpoint: Option<PathBuf>) -> PyResult<String> {
    let result = py
        .detach(|| commands::train(&config.inner, &data, &out, checkpoint.as_deref()))
        .py()?;
    Ok(result.report.to_text())
}

#[pyfunction]
fn predict(py: Python<'_>, checkpoint: PathBuf, data: PathBuf, out: PathBuf) -> PyResult<Vec<PathBuf>> {
    py.detach(|| commands::predict(&checkpoint, &data, &out)).py()
}

#[pyfunction]
#[pyo3(signature = (pred, truth, out, spacing = [1.0; 3]))]
fn evaluate(pred: PathBuf, truth: PathBuf, out: PathBuf, spacing: [f64; 3]) -> PyResult<String> {
    commands::evaluate(&pred, &truth, &out, spacing).py()
}

/// `(component, max_rel_err, tolerance, passed)` for every check in scope.
#[pyfunction]
#[pyo3(signature = (scope = "all", seed = 0))]
fn gradcheck(py: Python<'_>, scope: &str, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let scope: Scope = scope.parse().py()?;
    let checks = py.detach(|| commands::gradcheck(scope, seed)).py()?;
    Ok(checks
        .into_iter()
        .map(|c| {
            let passed = c.passed();
            (c.component, c.error, c.tolerance, passed)
        })
        .collect())
}

#[pymodule]
fn agse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(dice_loss, m)?)?;
    m.add_function(wrap_pyfunction!(soft_dice_per_class, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(phantom_gen, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
