//! Python bindings for `sfparse`.
//!
//! Arrays cross the boundary as flat lists of floats in row-major order;
//! label maps as `(width, height, bytes)`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use sfparse::bench::{bench as run_bench, scaling_report, BenchConfig};
use sfparse::config::RunConfig;
use sfparse::eval::{evaluate as eval_maps, EvalReport};
use sfparse::features::{FeatureRecord as CoreRecord, KernelParams, HOG_BINS};
use sfparse::image::LabelMap;
use sfparse::oracle::{brute_filter as core_brute_filter, brute_transfer, fidelity_suite};
use sfparse::sampler::{sample_balanced as core_sample, SampleSet as CoreSampleSet, SamplingScores, SuperpixelRef};
use sfparse::synth::{make_synthetic, SynthSpec};
use sfparse::transfer::{normalize as core_normalize, transfer as core_transfer};

fn to_py(e: sfparse::Error) -> PyErr {
    match e {
        sfparse::Error::Io { .. } | sfparse::Error::NotFound(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Config file text for a Python value; booleans as `true` / `false`.
fn value_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        return Ok(v.extract::<bool>()?.to_string());
    }
    Ok(v.str()?.to_string())
}

/// Run configuration. Keyword arguments and `set` take the same keys as the
/// configuration file, e.g. `Config(train="train.txt", **{"crf.w_app": 4})`.
#[pyclass(name = "Config", module = "pysfparse", from_py_object)]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = RunConfig::default();
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                inner.set(&k.extract::<String>()?, &value_text(&v)?).map_err(to_py)?;
            }
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value_text(value)?).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }

    fn __repr__(&self) -> String {
        format!("Config({:?})", self.inner.dump().lines().collect::<Vec<_>>())
    }
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("per_pixel", report.per_pixel())?;
    d.set_item("per_class", report.per_class())?;
    d.set_item("class_recall", report.class_recall())?;
    d.set_item("queries", report.queries)?;
    d.set_item("excluded", report.excluded.clone())?;
    d.set_item("timings_ms", report.timings.clone())?;
    Ok(d)
}

/// Parses every query and writes label maps to `config.out`. Returns the
/// merged evaluation, failures as `(name, message)`, and the written files.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &Config) -> PyResult<Bound<'py, PyDict>> {
    config.inner.validate().map_err(to_py)?;
    let cfg = config.inner.clone();
    let summary = py.detach(|| sfparse::pipeline::run(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("report", report_dict(py, &summary.report)?)?;
    d.set_item("failures", summary.failures.clone())?;
    d.set_item("outputs", summary.outputs.clone())?;
    Ok(d)
}

/// Per-pixel and per-class accuracy of a predicted label map.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    width: usize,
    height: usize,
    pred: Vec<u8>,
    truth: Vec<u8>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let pred = LabelMap::new(width, height, pred, num_classes).map_err(to_py)?;
    let truth = LabelMap::new(width, height, truth, num_classes).map_err(to_py)?;
    report_dict(py, &eval_maps("query", &pred, &truth).map_err(to_py)?)
}

/// Gaussian filter `sum_i exp(-|q - p_i|^2 / 2) v_i` through the lattice.
#[pyfunction]
fn filter(
    py: Python<'_>,
    points: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    value_width: usize,
    queries: Vec<f64>,
) -> PyResult<Vec<f64>> {
    py.detach(|| sfparse::lattice::filter(&points, &values, dim, value_width, &queries)).map_err(to_py)
}

/// The same sum evaluated exactly.
#[pyfunction]
fn brute_filter(
    py: Python<'_>,
    points: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    value_width: usize,
    queries: Vec<f64>,
) -> PyResult<Vec<f64>> {
    py.detach(|| core_brute_filter(&points, &values, dim, value_width, &queries)).map_err(to_py)
}

#[pyfunction]
fn normalize(q: Vec<f64>) -> Vec<f64> {
    core_normalize(&q)
}

/// Superpixel feature record.
#[pyclass(name = "FeatureRecord", module = "pysfparse", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct FeatureRecord {
    color: [f64; 3],
    gray_std: f64,
    top: f64,
    hog: Vec<f64>,
    dissimilarity: f64,
}

#[pymethods]
impl FeatureRecord {
    #[new]
    #[pyo3(signature = (color, gray_std, top, hog, dissimilarity = 0.0))]
    fn new(color: [f64; 3], gray_std: f64, top: f64, hog: Vec<f64>, dissimilarity: f64) -> PyResult<Self> {
        if hog.len() != HOG_BINS {
            return Err(PyValueError::new_err(format!("hog needs {HOG_BINS} bins, got {}", hog.len())));
        }
        Ok(Self { color, gray_std, top, hog, dissimilarity })
    }
}

impl FeatureRecord {
    fn core(&self) -> CoreRecord {
        let mut hog = [0.0; HOG_BINS];
        hog.copy_from_slice(&self.hog);
        CoreRecord { color: self.color, gray_std: self.gray_std, top: self.top, hog, dissimilarity: self.dissimilarity }
    }
}

/// Labeled samples with per-class weights.
#[pyclass(name = "SampleSet", module = "pysfparse", from_py_object)]
#[derive(Clone)]
struct SampleSet {
    inner: CoreSampleSet,
}

#[pymethods]
impl SampleSet {
    /// Samples over explicit records; weights follow the class counts.
    #[new]
    fn new(records: Vec<FeatureRecord>, labels: Vec<u8>, num_classes: usize) -> PyResult<Self> {
        let records = records.iter().map(FeatureRecord::core).collect();
        CoreSampleSet::from_records(records, labels, num_classes).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Copy with every class weight set to 1.
    fn with_unit_weights(&self) -> Self {
        Self { inner: self.inner.clone().with_unit_weights() }
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }

    /// Index of each sample in the scored input.
    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.inner.refs.iter().map(|r| r.image).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.counts.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<Option<f64>> {
        self.inner.weights.clone()
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.inner.n_max
    }

    fn __len__(&self) -> usize {
        self.inner.labels.len()
    }
}

/// Class-balanced draw from items with class `labels` and dissimilarities `d`.
#[pyfunction]
#[pyo3(signature = (labels, d, num_classes, cap, seed = 0, sigma_d_sample = 0.5))]
fn sample_balanced(
    labels: Vec<u8>,
    d: Vec<f64>,
    num_classes: usize,
    cap: usize,
    seed: u64,
    sigma_d_sample: f64,
) -> PyResult<SampleSet> {
    let scores = SamplingScores {
        refs: (0..labels.len()).map(|i| SuperpixelRef { image: i, superpixel: 0 }).collect(),
        d,
        p: Vec::new(),
        labels,
        num_classes,
    }
    .with_scores(sigma_d_sample)
    .map_err(to_py)?;
    core_sample(&scores, cap, seed).map(|inner| SampleSet { inner }).map_err(to_py)
}

fn kernel_params(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<KernelParams> {
    let mut cfg = RunConfig::default();
    if let Some(kwargs) = kwargs {
        for (k, v) in kwargs.iter() {
            let key = format!("kernel.{}", k.extract::<String>()?);
            cfg.set(&key, &value_text(&v)?).map_err(to_py)?;
        }
    }
    cfg.kernel.validate().map_err(to_py)?;
    Ok(cfg.kernel)
}

/// Raw and normalized class scores per query, `num_queries * num_classes`
/// floats each, plus the argmax. Kernel parameters go in as keywords,
/// e.g. `sigma_c=25`. `exact=True` evaluates the kernel sums directly.
#[pyfunction]
#[pyo3(signature = (sample, queries, exact = false, **kernel))]
fn transfer<'py>(
    py: Python<'py>,
    sample: &SampleSet,
    queries: Vec<FeatureRecord>,
    exact: bool,
    kernel: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let kp = kernel_params(kernel)?;
    let queries: Vec<CoreRecord> = queries.iter().map(FeatureRecord::core).collect();
    let set = &sample.inner;
    let scores = py
        .detach(|| if exact { brute_transfer(set, &queries, &kp) } else { core_transfer(set, &queries, &kp) })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("q", scores.q.clone())?;
    d.set_item("q_norm", scores.q_norm.clone())?;
    d.set_item("argmax", scores.argmax().into_iter().map(usize::from).collect::<Vec<_>>())?;
    Ok(d)
}

/// Writes a seeded synthetic corpus; returns the manifest and palette paths.
#[pyfunction]
#[pyo3(signature = (out, seed = 7, train = 60, query = 10, size = 128, classes = 4, rare_class = None, distractors = 0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    out: PathBuf,
    seed: u64,
    train: usize,
    query: usize,
    size: usize,
    classes: usize,
    rare_class: Option<u8>,
    distractors: usize,
) -> PyResult<(PathBuf, PathBuf, PathBuf)> {
    let spec = SynthSpec { seed, train, query, width: size, height: size, num_classes: classes, rare_class, distractors };
    let paths = make_synthetic(&spec, out).map_err(to_py)?;
    Ok((paths.train_manifest, paths.query_manifest, paths.palette))
}

/// Stage timings over a grid of sizes, as CSV rows plus a scaling summary.
#[pyfunction(name = "bench")]
#[pyo3(signature = (sizes = vec![10_000, 100_000, 1_000_000], queries = vec![1000], dim = 5, value_width = 3, seed = 0, repeats = 5))]
fn bench_lattice(
    py: Python<'_>,
    sizes: Vec<usize>,
    queries: Vec<usize>,
    dim: usize,
    value_width: usize,
    seed: u64,
    repeats: usize,
) -> PyResult<(String, String)> {
    let cfg = BenchConfig { sizes, queries, dim, value_width, seed, slice_repeats: repeats };
    let rows = py.detach(|| run_bench(&cfg)).map_err(to_py)?;
    Ok((sfparse::bench::rows_to_csv(&rows), scaling_report(&rows).to_text()))
}

/// Lattice against exact filtering on random instances:
/// pooled `(median, p95, max, argmax_agreement)` of the relative error.
#[pyfunction]
#[pyo3(signature = (instances = 20, train = 1000, queries = 1000, dim = 5, value_width = 3, seed = 0))]
fn verify(
    py: Python<'_>,
    instances: u64,
    train: usize,
    queries: usize,
    dim: usize,
    value_width: usize,
    seed: u64,
) -> PyResult<(f64, f64, f64, f64)> {
    let (_, pooled) =
        py.detach(|| fidelity_suite(seed..seed + instances, train, queries, dim, value_width)).map_err(to_py)?;
    Ok((pooled.median, pooled.p95, pooled.max, pooled.argmax_agreement))
}

#[pymodule]
fn pysfparse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HOG_BINS", HOG_BINS)?;
    m.add_class::<Config>()?;
    m.add_class::<FeatureRecord>()?;
    m.add_class::<SampleSet>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(brute_filter, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(sample_balanced, m)?)?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(bench_lattice, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
