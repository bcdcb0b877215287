//! Python bindings for the engagekit core.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use engagekit::dataset::{self, FeatureSchema, FrameTable, SessionKey, SynthConfig};
use engagekit::models::{self, GbdtConfig, GbdtModel};
use engagekit::preprocess::{self, FeatureGroup, WindowConfig, WindowTable};
use engagekit::protocols::{self, ExperimentConfig, SplitSpec};
use engagekit::{cli, metrics, policy, sequences, stats};

fn err(e: engagekit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

#[pyclass(name = "Frames", module = "engagekit_py", frozen)]
struct PyFrames(FrameTable);

#[pymethods]
impl PyFrames {
    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows()
    }

    fn participants(&self) -> Vec<String> {
        self.0
            .participants()
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    fn sessions(&self) -> Vec<(String, String)> {
        self.0
            .sessions()
            .iter()
            .map(|s| (s.key.participant.clone(), s.key.session.clone()))
            .collect()
    }

    fn engaged_fraction(&self) -> f64 {
        self.0.engaged_fraction()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataset::save_frames(&self.0, &path).map_err(err)
    }

    #[pyo3(signature = (window_s = 1.0, stride_s = 0.5))]
    fn window(&self, window_s: f64, stride_s: f64) -> PyResult<PyWindows> {
        let cfg = WindowConfig {
            window_s,
            stride_s,
            ..WindowConfig::default()
        };
        preprocess::window_aggregate(&self.0, &cfg)
            .map(PyWindows)
            .map_err(err)
    }
}

#[pyclass(name = "Windows", module = "engagekit_py", frozen)]
struct PyWindows(WindowTable);

#[pymethods]
impl PyWindows {
    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    fn feature_names(&self) -> Vec<String> {
        self.0
            .feature_names()
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    fn labels(&self) -> Vec<u8> {
        self.0.labels()
    }

    fn participants(&self) -> Vec<String> {
        self.0.participants()
    }

    /// Feature rows; missing values are NaN.
    fn features(&self) -> Vec<Vec<f64>> {
        self.0.rows().iter().map(|r| r.features.clone()).collect()
    }

    fn starts(&self) -> Vec<f64> {
        self.0.rows().iter().map(|r| r.t_start_s).collect()
    }

    /// Restricts to a feature group: `all`, `visual`, `audio`, `game`, `key`, or a comma list.
    fn select(&self, group: &str) -> PyResult<PyWindows> {
        let g: FeatureGroup = group.parse().map_err(err)?;
        preprocess::select_features(&self.0, &g)
            .map(PyWindows)
            .map_err(err)
    }

    fn subset(&self, rows: Vec<usize>) -> PyResult<PyWindows> {
        if rows.iter().any(|&r| r >= self.0.n_rows()) {
            return Err(PyValueError::new_err("row index out of range"));
        }
        Ok(PyWindows(self.0.subset(&rows)))
    }
}

#[pyclass(name = "GbdtModel", module = "engagekit_py", frozen)]
struct PyModel(GbdtModel);

#[pymethods]
impl PyModel {
    #[getter]
    fn degenerate(&self) -> bool {
        self.0.degenerate
    }

    fn tree_counts(&self) -> Vec<usize> {
        self.0.tree_counts()
    }

    fn predict(&self, windows: &PyWindows) -> PyResult<Vec<f64>> {
        models::predict_table(&self.0, &windows.0).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<PyModel> {
        GbdtModel::from_json(text).map(PyModel).map_err(err)
    }
}

/// Synthetic frames; `config_json` holds any subset of the generator fields.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn synthetic(config_json: Option<&str>) -> PyResult<PyFrames> {
    let cfg: SynthConfig = from_json(config_json)?;
    dataset::generate_synthetic(&cfg).map(PyFrames).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (path, schema_path = None, exclude_sessions = Vec::new()))]
fn load_frames(
    path: PathBuf,
    schema_path: Option<PathBuf>,
    exclude_sessions: Vec<(String, String)>,
) -> PyResult<PyFrames> {
    let schema = match schema_path {
        Some(p) => FeatureSchema::from_file(&p).map_err(err)?,
        None => FeatureSchema::study_default(),
    };
    let opts = dataset::LoadOptions {
        exclude_sessions: exclude_sessions
            .into_iter()
            .map(|(p, s)| SessionKey::new(p, s))
            .collect(),
    };
    dataset::load_frames_with(&path, &schema, &opts)
        .map(PyFrames)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (windows, config_json = None))]
fn train_gbdt(py: Python<'_>, windows: &PyWindows, config_json: Option<&str>) -> PyResult<PyModel> {
    let cfg: GbdtConfig = from_json(config_json)?;
    let table = windows.0.clone();
    py.detach(move || models::train_gbdt(&table, &cfg))
        .map(PyModel)
        .map_err(err)
}

#[pyfunction]
fn auroc(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    metrics::auroc(&labels, &scores).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (labels, scores, threshold = 0.5))]
fn classification_report<'py>(
    py: Python<'py>,
    labels: Vec<u8>,
    scores: Vec<f64>,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = metrics::classification_report(&labels, &scores, threshold).map_err(err)?;
    to_py(py, &r)
}

/// Runs one protocol. `spec_json` is e.g. `{"protocol": "generalized", "train_users": 6}`.
#[pyfunction]
#[pyo3(signature = (windows, spec_json, config_json = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    windows: &PyWindows,
    spec_json: &str,
    config_json: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: SplitSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cfg: ExperimentConfig = from_json(config_json)?;
    let table = windows.0.clone();
    let r = py
        .detach(move || protocols::run_experiment(&table, &spec, &cfg))
        .map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn segments<'py>(py: Python<'py>, windows: &PyWindows) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &sequences::segment_labels(&windows.0))
}

#[pyfunction]
fn sequence_stats<'py>(py: Python<'py>, windows: &PyWindows) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &sequences::sequence_stats(&sequences::segment_labels(&windows.0)),
    )
}

#[pyfunction]
#[pyo3(signature = (probs, window_s, stride_s = 0.5))]
fn smooth(probs: Vec<f64>, window_s: f64, stride_s: f64) -> Vec<f64> {
    policy::smooth(&probs, window_s, stride_s)
}

/// Zero-based ticks that open a run of `smoothed < threshold`.
#[pyfunction]
#[pyo3(signature = (smoothed, threshold, stride_s = 0.5))]
fn trigger_ticks(smoothed: Vec<f64>, threshold: f64, stride_s: f64) -> Vec<usize> {
    let starts: Vec<f64> = (0..smoothed.len()).map(|i| i as f64 * stride_s).collect();
    policy::triggers(
        &SessionKey::new("", ""),
        &starts,
        &smoothed,
        threshold,
        stride_s,
    )
    .into_iter()
    .map(|e| e.tick)
    .collect()
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<Option<f64>> {
    stats::spearman(&x, &y).map_err(err)
}

#[pyfunction]
fn fleiss_kappa(counts: Vec<Vec<u32>>) -> PyResult<f64> {
    let m = stats::RaterMatrix::new(counts).map_err(err)?;
    stats::fleiss_kappa(&m).map_err(err)
}

#[pyfunction]
fn anova_oneway<'py>(py: Python<'py>, groups: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stats::anova_oneway(&groups).map_err(err)?)
}

#[pyfunction]
fn pca<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, k: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &stats::pca_project(&rows, k).map_err(err)?)
}

/// Runs a CLI command; returns the artifact names written to `out`.
#[pyfunction]
#[pyo3(signature = (command, out, config_toml = None, seed = None))]
fn run_pipeline(
    py: Python<'_>,
    command: &str,
    out: PathBuf,
    config_toml: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Vec<String>> {
    let cmd = <cli::Command as clap::ValueEnum>::from_str(command, true)
        .map_err(PyValueError::new_err)?;
    let mut cfg = cli::RunConfig::from_toml_with_env(config_toml.unwrap_or(""), std::iter::empty())
        .map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    py.detach(move || cli::run(cmd, cfg, &out)).map_err(err)
}

#[pymodule]
fn engagekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFrames>()?;
    m.add_class::<PyWindows>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_frames, m)?)?;
    m.add_function(wrap_pyfunction!(train_gbdt, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(classification_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(segments, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_stats, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(trigger_ticks, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(anova_oneway, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
