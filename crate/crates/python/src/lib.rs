//! Python bindings: engines, elicitation sessions, simulated users and the
//! experiment runner.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use tastebud::catalog::{load_catalog, load_embeddings, DietType, KernelConfig};
use tastebud::elicitation::{ElicitationSession, Strategy, StrategyConfig, UserState};
use tastebud::nutrition::GoalProfile;
use tastebud::recommender::{recommend, DietEngine};
use tastebud::simulation::{acceptance_metrics, paired_comparison, run_experiment, ExperimentConfig, SimulatedUser};
use tastebud::synthetic::{SyntheticData, SyntheticSpec};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any JSON value into the matching Python object.
fn to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py_any(py)?,
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_py_any(py)?,
            (None, Some(u)) => u.into_py_any(py)?,
            _ => n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?,
        },
        Value::String(s) => s.into_py_any(py)?,
        Value::Array(items) => {
            let list = PyList::empty(py);
            for v in items {
                list.append(to_py(py, v)?)?;
            }
            list.into_py_any(py)?
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_py_any(py)?
        }
    })
}

fn serialized(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(err)?)
}

fn parse_diet(diet: &str) -> PyResult<DietType> {
    diet.parse().map_err(err)
}

fn profile(diet: DietType, calories: &str, protein: &str, fat: &str) -> PyResult<GoalProfile> {
    let doc = serde_json::json!({ "diet": diet, "calories": calories, "protein": protein, "fat": fat });
    serde_json::from_value(doc).map_err(err)
}

/// A diet-filtered catalog with its embedding space and suitability table.
#[pyclass(name = "Engine", module = "tastebud", frozen)]
struct PyEngine {
    inner: Arc<DietEngine>,
}

#[pymethods]
impl PyEngine {
    #[staticmethod]
    #[pyo3(signature = (catalog_path, embeddings_path, diet = "no_restrictions", delta_percentile = None, delta_absolute = None))]
    fn load(
        catalog_path: &str,
        embeddings_path: &str,
        diet: &str,
        delta_percentile: Option<f64>,
        delta_absolute: Option<f64>,
    ) -> PyResult<Self> {
        let catalog = load_catalog(catalog_path, parse_diet(diet)?).map_err(err)?;
        let embeddings = load_embeddings(embeddings_path, &catalog).map_err(err)?;
        let kernel = KernelConfig {
            delta_percentile,
            delta_absolute,
            ..KernelConfig::default()
        };
        let inner = DietEngine::new(catalog, embeddings, &kernel).map_err(err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    /// Engine over a generated clustered catalog.
    #[staticmethod]
    #[pyo3(signature = (diet = "no_restrictions", items = 2000, dim = 64, clusters = 20, seed = 0))]
    fn synthetic(diet: &str, items: usize, dim: usize, clusters: usize, seed: u64) -> PyResult<Self> {
        if dim == 0 || clusters == 0 {
            return Err(err("dim and clusters must be positive"));
        }
        let spec = SyntheticSpec {
            items,
            dim,
            clusters,
            seed,
            ..SyntheticSpec::default()
        };
        let data = SyntheticData::generate(&spec);
        let catalog = data.catalog(parse_diet(diet)?).map_err(err)?;
        let embeddings = data.embeddings(&catalog).map_err(err)?;
        let inner = DietEngine::new(catalog, embeddings, &KernelConfig::default()).map_err(err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    fn __len__(&self) -> usize {
        self.inner.catalog().len()
    }

    fn __repr__(&self) -> String {
        format!("Engine(diet={:?}, items={})", self.inner.catalog().diet().as_str(), self.__len__())
    }

    #[getter]
    fn diet(&self) -> &'static str {
        self.inner.catalog().diet().as_str()
    }

    /// `(alpha_sq, delta)` of the similarity kernel.
    #[getter]
    fn kernel(&self) -> (f64, f64) {
        let k = self.inner.space().kernel();
        (k.alpha_sq, k.delta)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.catalog().items().iter().map(|i| i.id.clone()).collect()
    }

    fn item(&self, py: Python<'_>, id: &str) -> PyResult<Py<PyAny>> {
        let index = self.inner.catalog().index_of(id).ok_or_else(|| err(format!("unknown item {id}")))?;
        serialized(py, self.inner.catalog().item(index))
    }

    /// Suitability score per item, in catalog order; lower is better.
    #[pyo3(signature = (calories = "maintain", protein = "maintain", fat = "maintain"))]
    fn suitability(&self, calories: &str, protein: &str, fat: &str) -> PyResult<Vec<u64>> {
        let p = profile(self.inner.catalog().diet(), calories, protein, fat)?;
        Ok(self.inner.table().scores(&p))
    }

    /// `(id, score)` pairs of the candidate pool, best first.
    #[pyo3(signature = (calories = "maintain", protein = "maintain", fat = "maintain", m = 500, seed = 0))]
    fn pool(&self, calories: &str, protein: &str, fat: &str, m: usize, seed: u64) -> PyResult<Vec<(String, u64)>> {
        let p = profile(self.inner.catalog().diet(), calories, protein, fat)?;
        let catalog = self.inner.catalog();
        Ok(self
            .inner
            .pool(&p, m, seed)
            .entries()
            .iter()
            .map(|e| (catalog.item(e.index).id.clone(), e.score))
            .collect())
    }

    #[pyo3(signature = (strategy = "LE+EE", seed = 0, iterations = 15, beta = None))]
    fn session(&self, strategy: &str, seed: u64, iterations: u32, beta: Option<f64>) -> PyResult<PySession> {
        let strategy: Strategy = strategy.parse().map_err(err)?;
        let mut config = StrategyConfig::new(strategy);
        config.beta = beta;
        config.rng_seed = seed;
        let inner = ElicitationSession::start(self.inner.space(), config, seed, iterations).map_err(err)?;
        Ok(PySession {
            engine: self.inner.clone(),
            inner,
        })
    }

    /// Top `n` pool items by learned preference, as dicts.
    #[pyo3(signature = (state, calories = "maintain", protein = "maintain", fat = "maintain", n = 10, m = 500, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn recommend(
        &self,
        py: Python<'_>,
        state: &PyState,
        calories: &str,
        protein: &str,
        fat: &str,
        n: usize,
        m: usize,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let p = profile(self.inner.catalog().diet(), calories, protein, fat)?;
        let pool = self.inner.pool(&p, m, seed);
        let recs = recommend(&state.inner, &pool, self.inner.catalog(), n).map_err(err)?;
        serialized(py, &recs)
    }
}

/// One elicitation run: read `pending()`, answer with `submit(ids)`.
#[pyclass(name = "Session", module = "tastebud")]
struct PySession {
    engine: Arc<DietEngine>,
    inner: ElicitationSession,
}

#[pymethods]
impl PySession {
    /// `{"iteration", "phase", "items"}` or None once finished.
    fn pending(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let Some(p) = self.inner.pending() else {
            return Ok(py.None());
        };
        let catalog = self.engine.catalog();
        let ids: Vec<&str> = p.items.iter().map(|&i| catalog.item(i).id.as_str()).collect();
        to_py(
            py,
            &serde_json::json!({ "iteration": self.inner.iteration(), "phase": p.phase, "items": ids }),
        )
    }

    /// Answers the pending presentation; returns True when the session ends.
    fn submit(&mut self, selected: Vec<String>) -> PyResult<bool> {
        let catalog = self.engine.catalog();
        let indices = selected
            .iter()
            .map(|id| catalog.index_of(id).ok_or_else(|| err(format!("unknown item {id}"))))
            .collect::<PyResult<Vec<_>>>()?;
        let outcome = self.inner.submit(self.engine.space(), &indices).map_err(err)?;
        Ok(outcome == tastebud::elicitation::StepOutcome::Finished)
    }

    #[getter]
    fn iteration(&self) -> u32 {
        self.inner.iteration()
    }

    #[getter]
    fn iterations(&self) -> u32 {
        self.inner.iterations()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    fn state(&self) -> PyState {
        PyState {
            inner: self.inner.state().clone(),
        }
    }
}

/// Snapshot of a learned preference distribution.
#[pyclass(name = "UserState", module = "tastebud", frozen)]
struct PyState {
    inner: UserState,
}

#[pymethods]
impl PyState {
    #[new]
    fn new(catalog_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: UserState::new(catalog_size).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: UserState::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn t(&self) -> u32 {
        self.inner.t()
    }

    fn p(&self) -> Vec<f64> {
        self.inner.p()
    }

    fn log_p(&self) -> Vec<f64> {
        self.inner.log_p().to_vec()
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn explored_count(&self) -> usize {
        self.inner.explored_count()
    }
}

/// A synthetic user with a hidden taste prototype in embedding space.
#[pyclass(name = "SimulatedUser", module = "tastebud", frozen)]
struct PyUser {
    engine: Arc<DietEngine>,
    inner: SimulatedUser,
}

#[pymethods]
impl PyUser {
    #[new]
    #[pyo3(signature = (engine, temperature = 0.1, seed = 0))]
    fn new(engine: &PyEngine, temperature: f64, seed: u64) -> Self {
        Self {
            engine: engine.inner.clone(),
            inner: SimulatedUser::sample(engine.inner.space(), temperature, seed),
        }
    }

    /// The ids this user picks from the session's pending presentation.
    fn answer(&self, session: &PySession) -> PyResult<Vec<String>> {
        if !Arc::ptr_eq(&self.engine, &session.engine) {
            return Err(err("user and session belong to different engines"));
        }
        let p = session.inner.pending().ok_or_else(|| err("session is finished"))?;
        let catalog = self.engine.catalog();
        Ok(self
            .inner
            .answer(p, session.inner.iteration())
            .into_iter()
            .map(|i| catalog.item(i).id.clone())
            .collect())
    }

    fn utility(&self, id: &str) -> PyResult<f64> {
        let i = self.engine.catalog().index_of(id).ok_or_else(|| err(format!("unknown item {id}")))?;
        Ok(self.inner.utility(i))
    }
}

/// Runs the simulated-user experiment; config and report are JSON text.
#[pyfunction]
#[pyo3(name = "run_experiment", signature = (config = None))]
fn py_run_experiment(py: Python<'_>, config: Option<&str>) -> PyResult<String> {
    let config: ExperimentConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => ExperimentConfig::default(),
    };
    let report = py.detach(|| run_experiment(&config)).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pyfunction]
#[pyo3(name = "acceptance_metrics")]
fn py_acceptance_metrics(py: Python<'_>, accepted: Vec<bool>) -> PyResult<Py<PyAny>> {
    serialized(py, &acceptance_metrics(&accepted).map_err(err)?)
}

#[pyfunction]
#[pyo3(name = "paired_comparison")]
fn py_paired_comparison(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Py<PyAny>> {
    serialized(py, &paired_comparison(&a, &b).map_err(err)?)
}

#[pymodule(name = "tastebud")]
fn tastebud_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyUser>()?;
    m.add_function(wrap_pyfunction!(py_run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(py_acceptance_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(py_paired_comparison, m)?)?;
    m.add("DIETS", DietType::ALL.iter().map(|d| d.as_str()).collect::<Vec<_>>())?;
    m.add("STRATEGIES", Strategy::ALL.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
