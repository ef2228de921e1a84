//! Python bindings: networks, checkpoints, metrics and dataset tools.
//!
//! Structured results cross the boundary as JSON and come back as plain
//! dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use octnet_core::data::{self, FixtureSpec};
use octnet_core::eval::{self, ConfusionMatrix};
use octnet_core::model::{self, Arch, ArchConfig, CLASS_NAMES, INPUT_CHANNELS, INPUT_SIZE};
use octnet_core::train;
use octnet_core::{Error, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::Integrity(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn default_classes(k: usize) -> Vec<String> {
    if k == CLASS_NAMES.len() {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| format!("class{i}")).collect()
    }
}

/// A classifier network with f32 weights.
#[pyclass(name = "Network", module = "octnet")]
struct PyNetwork {
    inner: model::Network<f32>,
}

#[pymethods]
impl PyNetwork {
    /// Builds `arch` ("vanilla_cnn", "xception", "resnet50", "mobilenetv2").
    #[new]
    #[pyo3(signature = (arch, width_divisor = 1, seed = 0))]
    fn new(arch: &str, width_divisor: usize, seed: u64) -> PyResult<Self> {
        let arch: Arch = arch.parse().map_err(to_py)?;
        let config = ArchConfig::default().with_width_divisor(width_divisor).with_seed(seed);
        let inner = model::build(arch, &config).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Loads a network from a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = train::load_checkpoint::<f32>(&path).map_err(to_py)?;
        Ok(Self { inner: ckpt.network })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(&self.inner, None, None, &path).map_err(to_py)
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn trainable_count(&self) -> usize {
        self.inner.trainable_count()
    }

    /// Per-layer rows with output shapes and parameter counts.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.report().to_json())
    }

    /// Classifies `n` images given as flat NHWC pixels in [0, 1].
    /// Returns (probabilities per image, label index per image).
    fn predict(&self, py: Python<'_>, pixels: Vec<f32>, n: usize) -> PyResult<(Vec<Vec<f32>>, Vec<usize>)> {
        let mut shape = vec![n];
        shape.extend_from_slice(self.inner.input_shape());
        let batch = Tensor::new(shape, pixels).map_err(to_py)?;
        let net = &self.inner;
        let (probs, labels) = py.detach(|| model::predict(net, &batch)).map_err(to_py)?;
        let k = probs.shape()[1];
        Ok((probs.data().chunks(k).map(<[f32]>::to_vec).collect(), labels))
    }

    /// Loads, resizes and classifies one JPEG/PNG file.
    /// Returns ({class: probability}, label).
    fn predict_file(&self, py: Python<'_>, path: PathBuf) -> PyResult<(Vec<(String, f32)>, String)> {
        let img = data::load_image(&path).map_err(to_py)?;
        let batch = Tensor::new([1, INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS], img.into_data()).map_err(to_py)?;
        let net = &self.inner;
        let (probs, labels) = py.detach(|| model::predict(net, &batch)).map_err(to_py)?;
        let named = CLASS_NAMES.iter().zip(probs.data()).map(|(c, p)| (c.to_string(), *p)).collect();
        Ok((named, CLASS_NAMES[labels[0]].to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Network({:?}, params={})", self.inner.name(), self.inner.param_count())
    }
}

/// Accuracy, per-class and micro/macro metrics of a confusion matrix
/// (rows = true class, columns = predicted).
#[pyfunction]
#[pyo3(signature = (counts, classes = None))]
fn confusion_metrics<'py>(
    py: Python<'py>,
    counts: Vec<Vec<u64>>,
    classes: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let classes = classes.unwrap_or_else(|| default_classes(counts.len()));
    let cm = ConfusionMatrix::new(classes, counts).map_err(to_py)?;
    let report = eval::aggregate_metrics(&cm).map_err(to_py)?;
    json_to_py(py, &report.to_json())
}

/// Builds a confusion matrix from label sequences.
#[pyfunction]
#[pyo3(signature = (truth, predicted, num_classes = 4))]
fn confusion_matrix(truth: Vec<usize>, predicted: Vec<usize>, num_classes: usize) -> PyResult<Vec<Vec<u64>>> {
    let cm = ConfusionMatrix::from_predictions(default_classes(num_classes), &truth, &predicted).map_err(to_py)?;
    Ok(cm.counts)
}

/// Recomputes the published metrics from the bundled reference confusion
/// matrices. Returns a dict with one row per (model, phase, metric).
#[pyfunction]
#[pyo3(signature = (tolerance = eval::DEFAULT_TOLERANCE))]
fn reproduce_published<'py>(py: Python<'py>, tolerance: f64) -> PyResult<Bound<'py, PyAny>> {
    let fixture = eval::reference_fixture().map_err(to_py)?;
    let rep = eval::reproduce_published(&fixture, tolerance).map_err(to_py)?;
    json_to_py(py, &rep.to_json())
}

/// Scans `<root>/{train,val,test}/<CLASS>/` and returns the manifest.
#[pyfunction]
fn scan_dataset<'py>(py: Python<'py>, root: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let manifest = data::scan_dataset(&root).map_err(to_py)?;
    json_to_py(py, &manifest.to_json())
}

/// Train/val/test sizes for `total` items at the given ratios.
#[pyfunction]
fn split_targets(total: usize, ratios: [f64; 3]) -> PyResult<[usize; 3]> {
    data::split_targets(total, &ratios).map_err(to_py)
}

/// Writes the synthetic four-class PNG dataset under `out`.
#[pyfunction]
#[pyo3(signature = (out, per_class = 32, size = 64, seed = 0))]
fn generate_fixture(out: PathBuf, per_class: usize, size: usize, seed: u64) -> PyResult<()> {
    data::generate_synthetic_fixture(&FixtureSpec::uniform(per_class, size, seed), &out).map_err(to_py)
}

#[pymodule]
fn octnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_published, m)?)?;
    m.add_function(wrap_pyfunction!(scan_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(split_targets, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    m.add("CLASS_NAMES", CLASS_NAMES.to_vec())?;
    m.add("INPUT_SIZE", INPUT_SIZE)?;
    Ok(())
}
