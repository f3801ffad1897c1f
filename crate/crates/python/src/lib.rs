//! Python bindings: the tagger, the crowd model, datasets and simulated
//! streams.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use otj_core::crf::{self, LabelSet, TokenSequence};
use otj_core::environment::{self, CrowdMode};
use otj_core::harness::{self, RunConfig, SyntheticConfig};
use otj_core::policy::{self, ThresholdConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tokens(words: Vec<String>) -> PyResult<TokenSequence> {
    TokenSequence::new(words).map_err(value_error)
}

/// Linear-chain CRF over sparse word features.
#[pyclass(module = "otj")]
struct CrfModel {
    inner: crf::CrfModel,
}

#[pymethods]
impl CrfModel {
    #[new]
    fn new(labels: Vec<String>) -> PyResult<Self> {
        let labels = LabelSet::new(labels).map_err(value_error)?;
        Ok(Self {
            inner: crf::CrfModel::new(labels),
        })
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_set().names().to_vec()
    }

    #[getter]
    fn num_weights(&self) -> usize {
        self.inner.weights().len()
    }

    /// Per-token label marginals.
    fn marginals(&self, words: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.marginals(&tokens(words)?).to_rows())
    }

    /// MAP label sequence.
    fn predict(&self, words: Vec<String>) -> PyResult<Vec<String>> {
        let labels = self.inner.label_set();
        Ok(self
            .inner
            .predict(&tokens(words)?)
            .into_iter()
            .map(|y| labels.name(y).to_owned())
            .collect())
    }

    /// One AdaGrad step towards per-token soft labels.
    #[pyo3(signature = (words, target, step_size=0.1, l2=0.0))]
    fn update(
        &mut self,
        words: Vec<String>,
        target: Vec<Vec<f64>>,
        step_size: f64,
        l2: f64,
    ) -> PyResult<()> {
        let cfg = crf::AdaGradConfig { step_size, l2 };
        self.inner
            .adagrad_update(&tokens(words)?, &target, &cfg)
            .map(|_| ())
            .map_err(value_error)
    }
}

/// Noisy worker: right with probability `accuracy`, otherwise uniform over
/// the wrong labels.
#[pyclass(module = "otj")]
struct ResponseModel {
    inner: environment::ResponseModel,
}

#[pymethods]
impl ResponseModel {
    #[new]
    fn new(accuracy: f64, num_labels: usize) -> PyResult<Self> {
        environment::ResponseModel::new(accuracy, num_labels)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn prob(&self, response: usize, truth: usize) -> f64 {
        self.inner.prob(response, truth)
    }

    /// `count` responses for label `truth`.
    #[pyo3(signature = (truth, count, seed=0))]
    fn sample(&self, truth: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.inner.sample(truth, &mut rng))
            .collect()
    }
}

#[pyclass(module = "otj")]
struct Dataset {
    inner: harness::Dataset,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_set.names().to_vec()
    }

    #[getter]
    fn num_tokens(&self) -> usize {
        self.inner.num_tokens()
    }

    /// `(tokens, gold labels)` of example `index`.
    fn example(&self, index: usize) -> PyResult<(Vec<String>, Vec<String>)> {
        let ex = self
            .inner
            .examples
            .get(index)
            .ok_or_else(|| value_error(format!("no example {index}")))?;
        let names = ex
            .gold
            .iter()
            .map(|&y| self.inner.label_set.name(y).to_owned())
            .collect();
        Ok((ex.input.tokens().to_vec(), names))
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(value_error)
    }
}

#[pyfunction]
fn load_dataset(path: std::path::PathBuf) -> PyResult<Dataset> {
    harness::load_sequence_dataset(path)
        .map(|inner| Dataset { inner })
        .map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (num_examples=500, length=8, seed=0))]
fn synthetic_dataset(num_examples: usize, length: usize, seed: u64) -> PyResult<Dataset> {
    harness::generate_synthetic(&SyntheticConfig {
        num_examples,
        length,
        seed,
        ..Default::default()
    })
    .map(|inner| Dataset { inner })
    .map_err(value_error)
}

/// Streams `dataset` against the simulated crowd. Returns the summary as a
/// dict of strings and one dict per episode.
#[pyfunction]
#[pyo3(signature = (dataset, policy="lense", seed=0, settings=None))]
fn simulate<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    policy: &str,
    seed: u64,
    settings: Option<Vec<(String, String)>>,
) -> PyResult<(Bound<'py, PyDict>, Vec<Bound<'py, PyDict>>)> {
    let mut config = RunConfig::default();
    config.set("policy", policy).map_err(value_error)?;
    config.seed = seed;
    for (k, v) in settings.unwrap_or_default() {
        config.set(&k, &v).map_err(value_error)?;
    }
    config.validate().map_err(value_error)?;
    let data = &dataset.inner;
    let output = py
        .detach(|| harness::run_stream(data, &config, CrowdMode::Generative))
        .map_err(value_error)?;
    let labels = data.label_set.names();
    let background = labels
        .iter()
        .any(|l| *l == config.background)
        .then_some(config.background.as_str());
    let summary = harness::compute_metrics(&output.records, labels, background, config.window);

    let table = PyDict::new(py);
    for (k, v) in summary.rows() {
        table.set_item(k, v)?;
    }
    let mut episodes = Vec::with_capacity(output.records.len());
    for r in &output.records {
        let d = PyDict::new(py);
        d.set_item("episode", r.episode)?;
        d.set_item("tokens", r.tokens.clone())?;
        d.set_item("predicted", r.predicted.clone())?;
        d.set_item("gold", r.gold.clone())?;
        d.set_item("num_queries", r.num_queries)?;
        d.set_item("latency", r.latency)?;
        d.set_item("utility", r.utility)?;
        episodes.push(d);
    }
    Ok((table, episodes))
}

/// Queries the threshold baseline issues for a token whose top marginal is
/// `max_marginal`.
#[pyfunction]
#[pyo3(signature = (max_marginal, target=0.98, factor=0.3))]
fn required_queries(max_marginal: f64, target: f64, factor: f64) -> usize {
    policy::required_queries(
        max_marginal,
        &ThresholdConfig {
            confidence_target: target,
            uncertainty_factor: factor,
        },
    )
}

#[pymodule]
fn otj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CrfModel>()?;
    m.add_class::<ResponseModel>()?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(required_queries, m)?)?;
    Ok(())
}
