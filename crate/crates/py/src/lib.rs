//! Python module `cpt`.

use std::collections::HashMap;

use cpt_core::baselines::lrt::LrtResult;
use cpt_core::stats::{Partitions, DEFAULT_PARTITIONS};
use cpt_core::{
    ClassifierSpec, DesignKind, LoadOptions, NullGenerator, PermutationPlan, SimulationConfig, StatSpec, TestSpec,
    Type1StudyConfig,
};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(cpt, CptError, PyException);

fn err(e: cpt_core::CptError) -> PyErr {
    CptError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_classifier(s: &str) -> PyResult<ClassifierSpec> {
    s.parse().map_err(err)
}

fn parse_stat(stat: &str, kappa: Option<usize>, partitions: Option<&Bound<'_, PyAny>>) -> PyResult<StatSpec> {
    match stat {
        "in" => Ok(StatSpec::InSample),
        "out" => {
            let partitions = match partitions {
                None => Partitions::Sampled(DEFAULT_PARTITIONS),
                Some(p) => parse_partitions(p)?,
            };
            Ok(StatSpec::OutOfSample { kappa, partitions })
        }
        other => Err(PyValueError::new_err(format!("stat must be \"in\" or \"out\", got {other:?}"))),
    }
}

fn parse_partitions(partitions: &Bound<'_, PyAny>) -> PyResult<Partitions> {
    let Ok(s) = partitions.extract::<String>() else {
        return Ok(Partitions::Sampled(partitions.extract::<usize>()?));
    };
    match s.as_str() {
        "exact" => Ok(Partitions::Exact),
        _ => s.parse().map(Partitions::Sampled).map_err(|_| {
            PyValueError::new_err(format!("partitions must be a positive integer or \"exact\", got {s:?}"))
        }),
    }
}

fn parse_design(s: &str) -> PyResult<DesignKind> {
    match s {
        "main" | "main-effects" => Ok(DesignKind::MainEffects),
        "two-way" | "twoway" => Ok(DesignKind::TwoWay),
        other => Err(PyValueError::new_err(format!("design must be \"main\" or \"two-way\", got {other:?}"))),
    }
}

/// Covariates, a 0/1 treatment vector and optional block labels.
#[pyclass(name = "Dataset", module = "cpt", frozen)]
struct PyDataset {
    inner: cpt_core::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (covariates, treatment, blocks=None, column_names=None))]
    fn new(
        covariates: Vec<Vec<f64>>,
        treatment: Vec<u8>,
        blocks: Option<Vec<String>>,
        column_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n = covariates.len();
        let p = covariates.first().map_or(0, Vec::len);
        if let Some((i, row)) = covariates.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(PyValueError::new_err(format!("row {i} has {} values, expected {p}", row.len())));
        }
        let x = DMatrix::from_fn(n, p, |i, j| covariates[i][j]);
        let names = column_names.unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
        let inner = cpt_core::Dataset::new(x, treatment, blocks, names).map_err(err)?;
        Ok(Self { inner })
    }

    /// Load a CSV file with a header row.
    #[staticmethod]
    #[pyo3(signature = (path, treatment="treatment", block=None, one_hot=Vec::new(), standardize=false))]
    fn from_csv(
        path: &str,
        treatment: &str,
        block: Option<String>,
        one_hot: Vec<String>,
        standardize: bool,
    ) -> PyResult<Self> {
        let opts = LoadOptions {
            block_column: block,
            one_hot,
            standardize,
            ..LoadOptions::new(treatment)
        };
        let inner = cpt_core::load_csv(path, &opts).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, treatment="treatment", block="block"))]
    fn to_csv(&self, path: &str, treatment: &str, block: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        cpt_core::write_csv(&self.inner, file, treatment, block).map_err(err)
    }

    fn standardized(&self) -> Self {
        Self {
            inner: self.inner.standardized(),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn treated_count(&self) -> usize {
        self.inner.treated_count()
    }

    #[getter]
    fn control_count(&self) -> usize {
        self.inner.control_count()
    }

    #[getter]
    fn treatment(&self) -> Vec<u8> {
        self.inner.treatment().to_vec()
    }

    #[getter]
    fn blocks(&self) -> Option<Vec<String>> {
        self.inner.blocks().map(<[String]>::to_vec)
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names().to_vec()
    }

    #[getter]
    fn covariates(&self) -> Vec<Vec<f64>> {
        let x = self.inner.covariates();
        (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, p={}, treated={}, blocked={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.treated_count(),
            self.inner.blocks().is_some()
        )
    }
}

#[pyclass(name = "TestResult", module = "cpt", frozen)]
struct PyTestResult {
    inner: cpt_core::TestResult,
}

#[pymethods]
impl PyTestResult {
    #[getter]
    fn observed(&self) -> f64 {
        self.inner.observed
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn null_draws(&self) -> Vec<f64> {
        self.inner.null_draws.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn elapsed(&self) -> f64 {
        self.inner.elapsed.as_secs_f64()
    }

    #[getter]
    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.spec_echo)
    }

    /// Null histogram as a list of `(low, high, count, holds_observed)`.
    #[pyo3(signature = (bins=20))]
    fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize, bool)> {
        let h = cpt_core::null_distribution_report(&self.inner, bins);
        h.bins
            .iter()
            .enumerate()
            .map(|(i, b)| (b.low, b.high, b.count, i == h.observed_bin))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TestResult(observed={}, p_value={}, B={})",
            self.inner.observed,
            self.inner.p_value,
            self.inner.null_draws.len()
        )
    }
}

/// Classification permutation test.
#[pyfunction]
#[pyo3(signature = (
    data, classifier="logistic2", stat="in", kappa=None, partitions=None,
    B=999, seed=0, permute="across", tie_break="conservative"
))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn run_cpt(
    py: Python<'_>,
    data: &PyDataset,
    classifier: &str,
    stat: &str,
    kappa: Option<usize>,
    partitions: Option<&Bound<'_, PyAny>>,
    B: usize,
    seed: u64,
    permute: &str,
    tie_break: &str,
) -> PyResult<PyTestResult> {
    let classifier = parse_classifier(classifier)?;
    let stat = parse_stat(stat, kappa, partitions)?;
    let mut plan = PermutationPlan::new(B, seed);
    match permute {
        "across" => {}
        "within" => plan = plan.within_blocks(),
        other => return Err(PyValueError::new_err(format!("permute must be \"across\" or \"within\", got {other:?}"))),
    }
    match tie_break {
        "conservative" => {}
        "randomized" => plan = plan.randomized_ties(),
        other => {
            return Err(PyValueError::new_err(format!(
                "tie_break must be \"conservative\" or \"randomized\", got {other:?}"
            )))
        }
    }
    let d = &data.inner;
    let inner = py
        .detach(|| cpt_core::run_cpt(d, &classifier, &stat, &plan))
        .map_err(err)?;
    Ok(PyTestResult { inner })
}


/// Exact permutation p-value over every relabelling with the observed group sizes.
#[pyfunction]
#[pyo3(signature = (data, classifier="logistic2", stat="in", kappa=None, partitions=None))]
fn exact_cpt(
    py: Python<'_>,
    data: &PyDataset,
    classifier: &str,
    stat: &str,
    kappa: Option<usize>,
    partitions: Option<&Bound<'_, PyAny>>,
) -> PyResult<f64> {
    let classifier = parse_classifier(classifier)?;
    let stat = parse_stat(stat, kappa, partitions)?;
    let d = &data.inner;
    py.detach(|| cpt_core::exact_cpt(d, &classifier, &stat)).map_err(err)
}

/// Permutation test on the two-sample energy distance.
#[pyfunction]
#[pyo3(signature = (data, B=999, seed=0))]
#[allow(non_snake_case)]
fn energy_test(py: Python<'_>, data: &PyDataset, B: usize, seed: u64) -> PyResult<PyTestResult> {
    let d = &data.inner;
    let inner = py.detach(|| cpt_core::energy_test(d, B, seed)).map_err(err)?;
    Ok(PyTestResult { inner })
}

/// Likelihood-ratio test of a logistic model of treatment on covariates.
#[pyfunction]
#[pyo3(signature = (data, design="main"))]
fn lrt_logistic<'py>(py: Python<'py>, data: &PyDataset, design: &str) -> PyResult<Bound<'py, PyAny>> {
    let design = parse_design(design)?;
    let d = &data.inner;
    let r: LrtResult = py.detach(|| cpt_core::lrt_logistic(d, design)).map_err(err)?;
    json_to_py(py, &r)
}

/// Two groups drawn from N(0, Sigma) and N(mu, Sigma) with equicorrelation rho.
#[pyfunction]
fn gen_mvn_dataset(rho: f64, n_treated: usize, n_control: usize, p: usize, seed: u64) -> PyResult<PyDataset> {
    let inner = cpt_core::gen_mvn_dataset(rho, n_treated, n_control, p, seed).map_err(err)?;
    Ok(PyDataset { inner })
}

/// ROC points `(fpr, tpr)` from null and alternative p-values.
#[pyfunction]
fn roc_points(null_pvalues: Vec<f64>, alt_pvalues: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    cpt_core::roc_points(&null_pvalues, &alt_pvalues).map_err(err)
}

/// Power study. `preset` is "desk" or "full"; keyword overrides replace preset fields.
#[pyfunction]
#[pyo3(signature = (preset="desk", **overrides))]
fn power_study<'py>(
    py: Python<'py>,
    preset: &str,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let base = match preset {
        "desk" => SimulationConfig::desk(),
        "full" => SimulationConfig::full(),
        other => return Err(PyValueError::new_err(format!("preset must be \"desk\" or \"full\", got {other:?}"))),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(kw) = overrides {
        let dumped: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let kw: HashMap<String, serde_json::Value> =
            serde_json::from_str(&dumped).map_err(|e| PyValueError::new_err(e.to_string()))?;
        for (k, mut v) in kw {
            if k == "tests" {
                v = tests_value(v)?;
            }
            let key = if k == "permutations" { "B".to_string() } else { k };
            if value.get(&key).is_none() {
                return Err(PyValueError::new_err(format!("unknown power study field {key:?}")));
            }
            value[key] = v;
        }
    }
    let cfg: SimulationConfig = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(err)?;
    let study = py.detach(|| cpt_core::run_power_study(&cfg)).map_err(err)?;
    json_to_py(py, &study)
}

/// Test names such as "cpt-logistic2" or "energy" become their serialized form.
fn tests_value(v: serde_json::Value) -> PyResult<serde_json::Value> {
    let Some(items) = v.as_array() else {
        return Err(PyValueError::new_err("tests must be a list"));
    };
    let specs = items
        .iter()
        .map(|item| match item.as_str() {
            Some(s) => s.parse::<TestSpec>().map_err(err),
            None => serde_json::from_value(item.clone()).map_err(|e| PyValueError::new_err(e.to_string())),
        })
        .collect::<PyResult<Vec<TestSpec>>>()?;
    serde_json::to_value(specs).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Null rejection rates for one test, from simulated N(0, I) data or by
/// shuffling the treatment of `data`.
#[pyfunction]
#[pyo3(signature = (
    test="cpt-logistic2", data=None, n_treated=20, n_control=20, p=3,
    replications=300, alpha=vec![0.05, 0.01], B=199, seed=0
))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn type1_study<'py>(
    py: Python<'py>,
    test: &str,
    data: Option<&PyDataset>,
    n_treated: usize,
    n_control: usize,
    p: usize,
    replications: usize,
    alpha: Vec<f64>,
    B: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let generator = match data {
        Some(d) => NullGenerator::Permute(d.inner.clone()),
        None => NullGenerator::Mvn { n_treated, n_control, p },
    };
    let cfg = Type1StudyConfig {
        generator,
        test: test.parse().map_err(err)?,
        permutations: B,
        replications,
        alpha_grid: alpha,
        seed,
    };
    let table = py.detach(|| cpt_core::run_type1_study(&cfg)).map_err(err)?;
    json_to_py(py, &table)
}

#[pymodule]
fn cpt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CptError", m.py().get_type::<CptError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTestResult>()?;
    m.add_function(wrap_pyfunction!(run_cpt, m)?)?;
    m.add_function(wrap_pyfunction!(exact_cpt, m)?)?;
    m.add_function(wrap_pyfunction!(energy_test, m)?)?;
    m.add_function(wrap_pyfunction!(lrt_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(gen_mvn_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(roc_points, m)?)?;
    m.add_function(wrap_pyfunction!(power_study, m)?)?;
    m.add_function(wrap_pyfunction!(type1_study, m)?)?;
    Ok(())
}
