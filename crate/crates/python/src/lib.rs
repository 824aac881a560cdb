//! Python module `rbcert`.
//!
//! Structured results cross the boundary as JSON strings; the Python side
//! decodes them with `json.loads`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rbcert::certification::{self as cert, CertificationReport as CoreReport};
use rbcert::error::Error as CoreError;
use rbcert::inference::{self, HypothesisSet as CoreHyps, LogLikelihoods};
use rbcert::interactions::{tavis_cummings_reduced_state, CouplingRow};
use rbcert::linalg::DensityMatrix;
use rbcert::scenarios::{run_scenario, RunOptions, ScenarioConfig};

fn py_err(e: CoreError) -> PyErr {
    match e {
        CoreError::Config(_)
        | CoreError::Fixture(_)
        | CoreError::InvalidArgument(_)
        | CoreError::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_ll(values: Vec<f64>) -> LogLikelihoods {
    LogLikelihoods(values)
}

/// Parses a TOML scenario, runs it and returns the report body as JSON.
pub fn run_config_json(config_toml: &str, seed: Option<u64>, compare_ic: bool) -> Result<String, CoreError> {
    let mut cfg: ScenarioConfig = toml::from_str(config_toml).map_err(|e| CoreError::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cfg = cfg.resolve()?;
    let out = run_scenario(&cfg, RunOptions { compare_ic })?;
    serde_json::to_string(&out.body).map_err(|e| CoreError::InvalidArgument(e.to_string()))
}

/// Built-in checks as JSON `[{name, passed, detail}, ...]`.
pub fn validation_json() -> String {
    serde_json::to_string(&rbcert::validation::run_all()).expect("checks serialize")
}

/// Discrete hypotheses with a prior.
#[pyclass(name = "HypothesisSet", frozen)]
pub struct PyHypothesisSet(CoreHyps);

#[pymethods]
impl PyHypothesisSet {
    #[new]
    fn new(labels: Vec<f64>, priors: Vec<f64>) -> PyResult<Self> {
        CoreHyps::new(labels, priors).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn uniform(labels: Vec<f64>) -> PyResult<Self> {
        CoreHyps::uniform(labels).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn gaussian(labels: Vec<f64>, center: f64, width: f64) -> PyResult<Self> {
        CoreHyps::gaussian(labels, center, width).map(Self).map_err(py_err)
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn priors(&self) -> Vec<f64> {
        self.0.priors().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("HypothesisSet(labels={:?}, priors={:?})", self.0.labels(), self.0.priors())
    }
}

/// RB ratios, posteriors and evidence for one dataset.
#[pyclass(name = "RbReport", frozen)]
pub struct PyRbReport(inference::RbReport);

#[pymethods]
impl PyRbReport {
    #[new]
    fn new(hypotheses: &PyHypothesisSet, log_likelihoods: Vec<f64>) -> PyResult<Self> {
        inference::RbReport::compute(&hypotheses.0, &to_ll(log_likelihoods)).map(Self).map_err(py_err)
    }

    #[getter]
    fn rb_ratios(&self) -> Vec<f64> {
        self.0.rb_ratios.clone()
    }

    #[getter]
    fn posteriors(&self) -> Vec<f64> {
        self.0.posteriors.clone()
    }

    #[getter]
    fn evidence(&self) -> Vec<f64> {
        self.0.evidence.clone()
    }

    #[getter]
    fn plausible(&self) -> Vec<bool> {
        self.0.plausible.clone()
    }

    #[getter]
    fn k_eff(&self) -> Option<usize> {
        self.0.k_eff
    }

    fn smallest_plausible(&self) -> Option<usize> {
        self.0.smallest_plausible()
    }
}

/// Certification of a hypothesis set, optionally with information criteria.
#[pyclass(name = "CertificationReport")]
pub struct PyCertificationReport(CoreReport);

#[pymethods]
impl PyCertificationReport {
    #[new]
    fn new(hypotheses: &PyHypothesisSet, log_likelihoods: Vec<f64>) -> PyResult<Self> {
        CoreReport::from_likelihoods(&hypotheses.0, &to_ll(log_likelihoods)).map(Self).map_err(py_err)
    }

    #[getter]
    fn d_rb(&self) -> Option<f64> {
        self.0.d_rb
    }

    #[getter]
    fn extend_recommended(&self) -> bool {
        self.0.extend_recommended
    }

    #[getter]
    fn rb_ratios(&self) -> Vec<f64> {
        self.0.rb.rb_ratios.clone()
    }

    /// Adds `alpha * kappa - log L`; returns the selected label.
    fn add_criterion(&mut self, name: String, alpha: f64, kappa: Vec<f64>) -> PyResult<f64> {
        let ic = cert::InformationCriterion::new(name, alpha, kappa).map_err(py_err)?;
        self.0.add_criterion(&ic).map(|r| r.d_label).map_err(py_err)
    }

    fn selected(&self, name: &str) -> Option<f64> {
        self.0.ic_results.get(name).map(|r| r.d_label)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("report serializes")
    }
}

#[pyfunction]
fn rb_ratios(hypotheses: &PyHypothesisSet, log_likelihoods: Vec<f64>) -> PyResult<Vec<f64>> {
    inference::rb_ratios(&hypotheses.0, &to_ll(log_likelihoods)).map_err(py_err)
}

#[pyfunction]
fn posterior(hypotheses: &PyHypothesisSet, log_likelihoods: Vec<f64>) -> PyResult<Vec<f64>> {
    inference::posterior(&hypotheses.0, &to_ll(log_likelihoods)).map_err(py_err)
}

/// `(eps_I, eps_II)` against a set of true labels.
#[pyfunction]
fn error_probabilities(
    hypotheses: &PyHypothesisSet,
    log_likelihoods: Vec<f64>,
    truth: Vec<f64>,
) -> PyResult<(f64, f64)> {
    let rep = inference::RbReport::compute(&hypotheses.0, &to_ll(log_likelihoods)).map_err(py_err)?;
    inference::error_probabilities(&hypotheses.0, &rep, &truth).map_err(py_err)
}

#[pyfunction]
fn aic(log_likelihoods: Vec<f64>, labels: Vec<f64>, kappa: Vec<f64>) -> PyResult<f64> {
    cert::aic(&to_ll(log_likelihoods), &labels, kappa).map(|r| r.d_label).map_err(py_err)
}

#[pyfunction]
fn bic(log_likelihoods: Vec<f64>, labels: Vec<f64>, kappa: Vec<f64>, n: u64) -> PyResult<f64> {
    cert::bic(&to_ll(log_likelihoods), &labels, kappa, n).map(|r| r.d_label).map_err(py_err)
}

#[pyfunction]
fn m_pol(n0: u64) -> u64 {
    rbcert::photonics::m_pol(n0)
}

#[pyfunction]
fn heralding_rate(tau: f64) -> f64 {
    rbcert::photonics::heralding_rate(tau)
}

/// Field diagonal after absorption of `|fock>` by absorbers with `couplings`.
#[pyfunction]
fn absorber_diagonal(fock: usize, dim: usize, couplings: Vec<f64>) -> PyResult<Vec<f64>> {
    if fock >= dim {
        return Err(PyValueError::new_err("fock must be below dim"));
    }
    let g = CouplingRow::new(couplings).map_err(py_err)?;
    tavis_cummings_reduced_state(&DensityMatrix::fock(dim, fock), &g).map(|r| r.diagonal_real()).map_err(py_err)
}

/// Runs a TOML scenario configuration; returns the report body as JSON.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None, compare_ic=false))]
fn run_config(py: Python<'_>, config_toml: &str, seed: Option<u64>, compare_ic: bool) -> PyResult<String> {
    py.detach(|| run_config_json(config_toml, seed, compare_ic)).map_err(py_err)
}

#[pyfunction]
fn validate(py: Python<'_>) -> String {
    py.detach(validation_json)
}

#[pymodule]
#[pyo3(name = "rbcert")]
fn rbcert_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHypothesisSet>()?;
    m.add_class::<PyRbReport>()?;
    m.add_class::<PyCertificationReport>()?;
    m.add_function(wrap_pyfunction!(rb_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(error_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(aic, m)?)?;
    m.add_function(wrap_pyfunction!(bic, m)?)?;
    m.add_function(wrap_pyfunction!(m_pol, m)?)?;
    m.add_function(wrap_pyfunction!(heralding_rate, m)?)?;
    m.add_function(wrap_pyfunction!(absorber_diagonal, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
