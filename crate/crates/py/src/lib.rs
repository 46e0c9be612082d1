//! Python bindings.
//!
//! Data crosses the boundary as plain lists; reports come back as nested
//! dicts and lists.

use std::path::PathBuf;

use engine::data::{self, apply_preprocess, load_csv, Dataset as CoreDataset, PreprocessStats, Schema};
use engine::metrics;
use engine::model::{self as core_model, Checkpoint, HazardModel, HazardNetwork};
use engine::training::{self, TrainConfig as CoreConfig};
use engine::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Domain(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Input(_) | Error::Parse { .. } | Error::Config(_) | Error::Format(_) | Error::UndefinedMetric(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Dimension { .. } | Error::State(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for engine::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

/// Survival data: observed times, labels (0 = censored), and covariates.
#[pyclass(module = "contsurv")]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(data: PathBuf, schema: PathBuf) -> PyResult<Self> {
        let schema = Schema::load(&schema).py_err()?;
        Ok(Self {
            inner: load_csv(&data, &schema).py_err()?,
        })
    }

    /// Numeric-only dataset from covariate rows.
    #[staticmethod]
    #[pyo3(signature = (x, times, labels, risks=None))]
    fn from_arrays(x: Vec<Vec<f64>>, times: Vec<f64>, labels: Vec<usize>, risks: Option<usize>) -> PyResult<Self> {
        if x.len() != times.len() || x.len() != labels.len() {
            return Err(PyValueError::new_err("x, times and labels must have the same length"));
        }
        let width = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != width) {
            return Err(PyValueError::new_err("ragged covariate rows"));
        }
        let risks = risks.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0).max(1));
        let schema = Schema::numeric((1..=width).map(|j| format!("x{j}")), risks);
        let columns = (0..width)
            .map(|j| data::Column::Numeric(x.iter().map(|r| Some(r[j])).collect()))
            .collect();
        Ok(Self {
            inner: CoreDataset {
                schema,
                columns,
                times,
                labels,
                provenance: "python".into(),
            },
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed=0))]
    fn simulate_nonlinear(n: usize, seed: u64) -> Self {
        Self {
            inner: data::simulate_nonlinear(n, seed),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed=0))]
    fn simulate_competing(n: usize, seed: u64) -> Self {
        Self {
            inner: data::simulate_competing(n, seed),
        }
    }

    fn save(&self, data: PathBuf, schema: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&data).py_err()?;
        self.inner.schema.save(&schema).py_err()
    }

    fn subset(&self, rows: Vec<usize>) -> PyResult<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("row {r} out of range")));
        }
        Ok(Self {
            inner: self.inner.subset(&rows),
        })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn risks(&self) -> usize {
        self.inner.risks()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.schema.features.iter().map(|f| f.name.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, features={}, risks={})",
            self.inner.len(),
            self.inner.schema.features.len(),
            self.inner.risks()
        )
    }
}

/// Training configuration. Keyword arguments override the defaults.
#[pyclass(module = "contsurv", skip_from_py_object)]
#[derive(Clone)]
pub struct TrainConfig {
    inner: CoreConfig,
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: CoreConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                cfg.set(&key, &v)?;
            }
        }
        cfg.inner.validate().py_err()?;
        Ok(cfg)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_toml(text).py_err()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    /// Sets one key; the value is parsed as the TOML value of that key.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut table = toml::Table::try_from(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        if !table.contains_key(key) && key != "risks" {
            return Err(PyValueError::new_err(format!("unknown configuration key `{key}`")));
        }
        let v = match (py_to_toml(value)?, table.get(key)) {
            (Some(toml::Value::Integer(i)), Some(toml::Value::Float(_))) => Some(toml::Value::Float(i as f64)),
            (v, _) => v,
        };
        match v {
            Some(v) => table.insert(key.to_string(), v),
            None => table.remove(key),
        };
        self.inner = CoreConfig::from_toml(&table.to_string()).py_err()?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({:?})", self.inner)
    }
}

fn py_to_toml(v: &Bound<'_, PyAny>) -> PyResult<Option<toml::Value>> {
    if v.is_none() {
        return Ok(None);
    }
    if let Ok(b) = v.extract::<bool>() {
        return Ok(Some(toml::Value::Boolean(b)));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(Some(toml::Value::Integer(i)));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(Some(toml::Value::Float(f)));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(Some(toml::Value::String(s)));
    }
    if let Ok(items) = v.extract::<Vec<Bound<'_, PyAny>>>() {
        let vals = items
            .iter()
            .map(|x| py_to_toml(x)?.ok_or_else(|| PyValueError::new_err("None inside a list")))
            .collect::<PyResult<Vec<_>>>()?;
        return Ok(Some(toml::Value::Array(vals)));
    }
    Err(PyValueError::new_err(format!("unsupported configuration value {v}")))
}

/// A trained hazard network with the preprocessing fitted alongside it.
#[pyclass(module = "contsurv")]
pub struct Model {
    network: HazardNetwork,
    stats: PreprocessStats,
    log: Vec<(usize, f64, f64)>,
}

impl Model {
    fn prepare(&self, data: &CoreDataset) -> PyResult<engine::data::Prepared> {
        let p = apply_preprocess(data, &self.stats).py_err()?;
        if p.x.cols() != self.network.covariate_dim() {
            return Err(PyValueError::new_err(format!(
                "data encodes to {} covariates, model expects {}",
                p.x.cols(),
                self.network.covariate_dim()
            )));
        }
        Ok(p)
    }

    fn scaled(&self, mesh: &[f64]) -> Vec<f64> {
        mesh.iter().map(|t| t / self.stats.time_scale).collect()
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).py_err()?;
        let stats = ck
            .preprocess
            .clone()
            .ok_or_else(|| PyValueError::new_err("checkpoint has no preprocessing statistics"))?;
        Ok(Self {
            network: HazardNetwork::from_checkpoint(&ck).py_err()?,
            stats,
            log: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.network
            .to_checkpoint(Some(self.stats.clone()))
            .save(&path)
            .py_err()
    }

    #[getter]
    fn risks(&self) -> usize {
        self.network.risks()
    }

    #[getter]
    fn time_scale(&self) -> f64 {
        self.stats.time_scale
    }

    /// `(epoch, train_loss, holdout_loss)` per epoch; empty for loaded models.
    #[getter]
    fn training_log(&self) -> Vec<(usize, f64, f64)> {
        self.log.clone()
    }

    /// Hazard rates per row at one time each, `len(data)` rows of `risks`.
    fn hazards(&self, data: &Dataset, times: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        if times.len() != data.inner.len() {
            return Err(PyValueError::new_err("one time per row required"));
        }
        let p = self.prepare(&data.inner)?;
        let h = self.network.hazards(&p.x, &self.scaled(&times)).py_err()?;
        // rates are per scaled time unit
        Ok((0..h.rows())
            .map(|i| h.row(i).iter().map(|v| v / self.stats.time_scale).collect())
            .collect())
    }

    /// Survival and cumulative incidence for every row on `mesh`
    /// (original time units, starting at 0, nondecreasing).
    fn predict<'py>(&self, py: Python<'py>, data: &Dataset, mesh: Vec<f64>) -> PyResult<Bound<'py, PyList>> {
        let p = self.prepare(&data.inner)?;
        let curves = core_model::predict_cif_batch(&self.network, &p.x, &self.scaled(&mesh)).py_err()?;
        let out = PyList::empty(py);
        for c in curves {
            let d = PyDict::new(py);
            d.set_item("times", mesh.clone())?;
            d.set_item("survival", c.survival)?;
            d.set_item("incidence", c.incidence)?;
            out.append(d)?;
        }
        Ok(out)
    }

    /// Ctd and Brier scores at the dataset's event-time quartiles.
    fn evaluate<'py>(&self, py: Python<'py>, data: &Dataset) -> PyResult<Bound<'py, PyAny>> {
        let report = training::evaluate_dataset(&self.network, &self.stats, &data.inner).py_err()?;
        to_py(py, &report.entries)
    }

    fn __repr__(&self) -> String {
        let a = self.network.architecture();
        format!(
            "Model(covariates={}, risks={}, hidden={:?}, encoder={})",
            a.covariates, a.risks, a.hidden, a.encoder
        )
    }
}

/// Trains on all non-holdout rows.
#[pyfunction]
#[pyo3(signature = (data, config=None))]
fn fit(py: Python<'_>, data: &Dataset, config: Option<&TrainConfig>) -> PyResult<Model> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let fitted = py.detach(|| training::fit(&data.inner, &cfg)).py_err()?;
    Ok(Model {
        log: fitted
            .outcome
            .log
            .iter()
            .map(|r| (r.epoch, r.train_loss, r.holdout_loss))
            .collect(),
        network: fitted.outcome.network,
        stats: fitted.stats,
    })
}

/// Runs the cross-validation protocol; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (data, config=None, max_folds=None))]
fn cross_validate<'py>(
    py: Python<'py>,
    data: &Dataset,
    config: Option<&TrainConfig>,
    max_folds: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let report = py
        .detach(|| training::cross_validate_observed(&data.inner, &cfg, max_folds, &mut |_, _| {}))
        .py_err()?;
    to_py(py, &report)
}

/// Kaplan-Meier survival estimate as `(times, values)` step points.
#[pyfunction]
fn kaplan_meier(times: Vec<f64>, events: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let e = metrics::kaplan_meier(&times, &events).py_err()?;
    Ok((e.times, e.values))
}

fn censoring(times: &[f64], labels: &[usize]) -> PyResult<metrics::CensoringEstimate> {
    let events: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    metrics::km_censoring(times, &events).py_err()
}

/// IPCW time-dependent concordance for `risk` at `horizon`.
#[pyfunction]
fn ctd(scores: Vec<f64>, times: Vec<f64>, labels: Vec<usize>, risk: usize, horizon: f64) -> PyResult<f64> {
    let g = censoring(&times, &labels)?;
    metrics::ctd_ipcw(&scores, &times, &labels, risk, &g, horizon).py_err()
}

/// IPCW Brier score of `P(T > horizon)` predictions for `risk`.
#[pyfunction]
fn brier(survival: Vec<f64>, times: Vec<f64>, labels: Vec<usize>, risk: usize, horizon: f64) -> PyResult<f64> {
    let g = censoring(&times, &labels)?;
    metrics::brier_ipcw(&survival, &times, &labels, risk, &g, horizon).py_err()
}

#[pymodule]
fn contsurv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(ctd, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
