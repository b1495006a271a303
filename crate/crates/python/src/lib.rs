//! Python module `avfuse`: metrics, SVR training, fusion, post-processing
//! and full experiment runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use avfuse_core::experiment::{emit_report, ExperimentConfig, RunOutcome, Stage};
use avfuse_core::fusion;
use avfuse_core::ingest::{generate_synthetic, write_dataset, SynthSpec};
use avfuse_core::postprocess;
use avfuse_core::svr::{train_svr, Kernel, SmoOptions, SvrHyperParams};
use avfuse_core::{ErrorKind, EvaluationReport, FeatureStream, FrameMask, Matrix};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(avfuse, AvfuseError, PyException);
create_exception!(avfuse, UsageError, AvfuseError);
create_exception!(avfuse, DataError, AvfuseError);
create_exception!(avfuse, NumericalError, AvfuseError);

fn py_err(e: avfuse_core::Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Usage => UsageError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Numerical => NumericalError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for avfuse_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).py()
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Evaluation of a prediction against gold.
#[pyclass(name = "Report", frozen, from_py_object)]
#[derive(Clone)]
struct PyReport(EvaluationReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn ccc(&self) -> f64 {
        self.0.ccc
    }
    #[getter]
    fn mae(&self) -> f64 {
        self.0.mae
    }
    #[getter]
    fn pearson(&self) -> f64 {
        self.0.pearson
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
    /// All fields at full precision.
    fn records(&self) -> BTreeMap<&'static str, String> {
        self.0.records().into_iter().collect()
    }
    fn __repr__(&self) -> String {
        format!(
            "Report(ccc={}, mae={}, pearson={}, n={})",
            self.0.ccc, self.0.mae, self.0.pearson, self.0.n
        )
    }
}

#[pyfunction]
fn ccc(pred: Vec<f64>, gold: Vec<f64>) -> PyResult<f64> {
    Ok(avfuse_core::ccc(&pred, &gold).py()?.ccc)
}

#[pyfunction]
fn pearson(pred: Vec<f64>, gold: Vec<f64>) -> PyResult<f64> {
    avfuse_core::pearson(&pred, &gold).py()
}

#[pyfunction]
fn mae(pred: Vec<f64>, gold: Vec<f64>) -> PyResult<f64> {
    avfuse_core::mae(&pred, &gold).py()
}

#[pyfunction]
fn evaluate(pred: Vec<f64>, gold: Vec<f64>) -> PyResult<PyReport> {
    avfuse_core::ccc(&pred, &gold).py().map(PyReport)
}

/// Median filter with the window in seconds.
#[pyfunction]
#[pyo3(signature = (pred, window_s, frame_period_s=0.04, allow_override=false))]
fn median_filter(
    pred: Vec<f64>,
    window_s: f64,
    frame_period_s: f64,
    allow_override: bool,
) -> PyResult<Vec<f64>> {
    postprocess::median_filter(&pred, window_s, frame_period_s, allow_override).py()
}

/// Weighted average of per-modality predictions; uniform without weights.
#[pyfunction]
#[pyo3(signature = (predictions, weights=None))]
fn late_fuse(predictions: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let refs: Vec<&[f64]> = predictions.iter().map(Vec::as_slice).collect();
    fusion::late_fuse(&refs, weights.as_deref()).py()
}

/// Concatenate per-frame features. Returns `(rows, valid)`; a fused frame is
/// valid when it is valid in every input.
#[pyfunction]
#[pyo3(signature = (features, masks=None))]
fn early_fuse(
    features: Vec<Vec<Vec<f64>>>,
    masks: Option<Vec<Vec<bool>>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<bool>)> {
    let streams = features
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let valid = match &masks {
                Some(m) => m.get(i).cloned().ok_or_else(|| {
                    UsageError::new_err(format!("no mask for feature set {i}"))
                })?,
                None => vec![true; rows.len()],
            };
            FeatureStream::new(&format!("m{i}"), matrix(rows)?, FrameMask { valid }, 0.04).py()
        })
        .collect::<PyResult<Vec<_>>>()?;
    let fused = fusion::early_fuse(&streams.iter().collect::<Vec<_>>()).py()?;
    Ok((to_rows(&fused.frames), fused.mask.valid))
}

/// A trained epsilon-SVR.
#[pyclass(name = "SvrModel", frozen)]
struct PySvrModel(avfuse_core::svr::SvrModel);

#[pymethods]
impl PySvrModel {
    /// Train on rows `x` with targets `y`. `kernel` is `linear` or `rbf:<gamma>`.
    #[staticmethod]
    #[pyo3(signature = (x, y, c=1.0, epsilon=0.1, kernel="linear", tol=1e-3))]
    fn train(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        c: f64,
        epsilon: f64,
        kernel: &str,
        tol: f64,
    ) -> PyResult<Self> {
        let kernel: Kernel = kernel.parse().py()?;
        let hyper = SvrHyperParams::new(c, epsilon, kernel).py()?;
        let x = matrix(&x)?;
        let opts = SmoOptions {
            tol,
            ..SmoOptions::default()
        };
        py.detach(|| train_svr(&x, &y, &hyper, &opts)).py().map(PySvrModel)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        avfuse_core::svr::read_model(&path).py().map(PySvrModel)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        avfuse_core::svr::SvrModel::from_text(text, "<string>".as_ref())
            .py()
            .map(PySvrModel)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        avfuse_core::svr::write_model(&self.0, &path).py()
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.0.predict(&matrix(&x)?).py()
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.0.n_support()
    }
    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }
    #[getter]
    fn bias(&self) -> f64 {
        self.0.bias
    }
    #[getter]
    fn dual_coefs(&self) -> Vec<f64> {
        self.0.dual_coefs.clone()
    }
    #[getter]
    fn dual_objective(&self) -> f64 {
        self.0.info.dual_objective
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.info.converged()
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.0.info.iterations
    }
    fn __repr__(&self) -> String {
        format!(
            "SvrModel({}, n_support={}, dim={})",
            self.0.hyper,
            self.0.n_support(),
            self.0.dim()
        )
    }
}

/// Write a seeded synthetic dataset to `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, train_subjects=None, dev_subjects=None, frames=None, lag=0))]
fn generate_synthetic_dataset(
    py: Python<'_>,
    out_dir: PathBuf,
    seed: u64,
    train_subjects: Option<usize>,
    dev_subjects: Option<usize>,
    frames: Option<usize>,
    lag: usize,
) -> PyResult<PathBuf> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        seed,
        n_subjects_train: train_subjects.unwrap_or(d.n_subjects_train),
        n_subjects_dev: dev_subjects.unwrap_or(d.n_subjects_dev),
        frames_per_subject: frames.unwrap_or(d.frames_per_subject),
        annotation_lag_frames: lag,
        ..d
    };
    py.detach(|| write_dataset(&generate_synthetic(&spec)?, &out_dir)).py()
}

/// Outcome of one experiment run.
#[pyclass(name = "Run", frozen)]
struct PyRun(RunOutcome);

#[pymethods]
impl PyRun {
    #[getter]
    fn name(&self) -> String {
        self.0.report.name.clone()
    }
    #[getter]
    fn config_hash(&self) -> String {
        self.0.report.config_hash.clone()
    }
    #[getter]
    fn final_ccc(&self) -> f64 {
        self.0.report.final_ccc()
    }
    /// Report for one stage: raw, median, scale, center or final.
    fn stage(&self, name: &str) -> PyResult<PyReport> {
        let s = Stage::parse(name)
            .ok_or_else(|| UsageError::new_err(format!("unknown stage {name:?}")))?;
        Ok(PyReport(self.0.report.stage(s).clone()))
    }
    /// Raw dev CCC of each single-modality branch.
    fn unimodal_ccc(&self) -> BTreeMap<String, f64> {
        self.0
            .report
            .unimodal
            .iter()
            .map(|(m, r)| (m.clone(), r.ccc))
            .collect()
    }
    /// Flat `key -> value` records as written to the report file.
    fn records(&self) -> Vec<(String, String)> {
        self.0.report.records(None)
    }
    /// Dev frames per stage, keyed by stage name, plus `gold`.
    fn frames(&self) -> BTreeMap<String, Vec<f64>> {
        let a = &self.0.archive;
        let mut out: BTreeMap<String, Vec<f64>> = a
            .stages
            .iter()
            .map(|(s, v)| (s.as_str().to_string(), v.clone()))
            .collect();
        out.insert("gold".into(), a.gold.clone());
        out
    }
    /// Write table, records, frames and models; returns the table path.
    fn emit(&self, out_dir: PathBuf) -> PyResult<PathBuf> {
        Ok(emit_report(&[&self.0], &out_dir).py()?.table)
    }
}

/// Run an experiment described by a TOML config string.
#[pyfunction]
#[pyo3(signature = (config_toml, jobs=None))]
fn run_experiment(py: Python<'_>, config_toml: &str, jobs: Option<usize>) -> PyResult<PyRun> {
    let mut cfg = ExperimentConfig::from_toml(config_toml).py()?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    py.detach(|| avfuse_core::experiment::run_experiment(&cfg))
        .py()
        .map(PyRun)
}

#[pymodule]
fn avfuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("AvfuseError", py.get_type::<AvfuseError>())?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyReport>()?;
    m.add_class::<PySvrModel>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(ccc, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(median_filter, m)?)?;
    m.add_function(wrap_pyfunction!(late_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(early_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
