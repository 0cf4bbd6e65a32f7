//! Python bindings for the cascade: datasets, run configs, label trees,
//! trained model bundles and the evaluation metrics.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cascadexml::bundle::ModelBundle;
use cascadexml::cascade::rescale_alphas as core_rescale_alphas;
use cascadexml::config::RunConfig;
use cascadexml::data::{generate_synthetic, parse_dataset, SyntheticConfig};
use cascadexml::hlt::{LabelTree, Shortlist};
use cascadexml::metrics::{self, Metric, PropensityModel};
use cascadexml::pipeline;
use cascadexml::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::StaleCache | Error::NonFinite { .. } | Error::EmptyShortlist => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Sparse multi-label dataset.
#[pyclass(name = "Dataset", module = "cascadexml_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: cascadexml::data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        cascadexml::data::Dataset::load(path)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_dataset(text).map(|inner| PyDataset { inner }).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (num_labels=256, depth=4, num_docs=None, noise=0.1, extra_labels=2, vocab=4096, seed=0))]
    fn synthetic(
        num_labels: usize,
        depth: usize,
        num_docs: Option<usize>,
        noise: f64,
        extra_labels: usize,
        vocab: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            num_labels,
            depth,
            num_docs,
            noise,
            extra_labels,
            vocab,
            seed,
            ..SyntheticConfig::default()
        };
        generate_synthetic(&cfg).map(|inner| PyDataset { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Splits off the trailing `fraction` of instances as `(head, tail)`.
    fn split_tail(&self, fraction: f64) -> (PyDataset, PyDataset) {
        let (a, b) = self.inner.split_tail(fraction);
        (PyDataset { inner: a }, PyDataset { inner: b })
    }

    fn labels(&self, index: usize) -> PyResult<Vec<u32>> {
        self.inner
            .instances
            .get(index)
            .map(|i| i.labels.clone())
            .ok_or_else(|| PyValueError::new_err(format!("instance {} out of range", index)))
    }

    #[getter]
    fn num_points(&self) -> usize {
        self.inner.num_points()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features
    }

    #[getter]
    fn num_labels(&self) -> usize {
        self.inner.num_labels
    }

    fn __len__(&self) -> usize {
        self.inner.num_points()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(points={}, features={}, labels={})",
            self.inner.num_points(),
            self.inner.num_features,
            self.inner.num_labels
        )
    }
}

/// Tree, encoder, training and beam settings.
#[pyclass(name = "RunConfig", module = "cascadexml_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn desk_scale(seed: u64) -> Self {
        PyRunConfig {
            inner: RunConfig::desk_scale(seed),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        RunConfig::load(path).map(|inner| PyRunConfig { inner }).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn beam_widths(&self) -> Vec<usize> {
        self.inner.beam_widths.clone()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }
}

/// Hierarchical label tree; levels are numbered from 1, the last one being the labels.
#[pyclass(name = "LabelTree", module = "cascadexml_py", skip_from_py_object)]
#[derive(Clone)]
struct PyLabelTree {
    inner: LabelTree,
}

#[pymethods]
impl PyLabelTree {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        LabelTree::load(path).map(|inner| PyLabelTree { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn level_sizes(&self) -> Vec<usize> {
        self.inner.level_sizes().to_vec()
    }

    #[getter]
    fn num_labels(&self) -> usize {
        self.inner.num_labels()
    }

    /// Children at `level + 1` of the given level-`level` clusters.
    fn refine(&self, level: usize, ids: Vec<u32>) -> PyResult<Vec<u32>> {
        self.inner
            .refine(&Shortlist::new(level, ids))
            .map(|s| s.ids)
            .map_err(to_py)
    }

    /// Parents at `level - 1` of the given level-`level` nodes.
    fn coarsen(&self, level: usize, ids: Vec<u32>) -> PyResult<Vec<u32>> {
        self.inner
            .coarsen(&Shortlist::new(level, ids))
            .map(|s| s.ids)
            .map_err(to_py)
    }

    /// Level-`level` clusters containing at least one of `labels`.
    fn level_cover(&self, labels: Vec<u32>, level: usize) -> PyResult<Vec<u32>> {
        self.inner.level_cover(&labels, level).map(|s| s.ids).map_err(to_py)
    }
}

/// Trained cascade together with its tf-idf vectorizer and label statistics.
#[pyclass(name = "Model", module = "cascadexml_py")]
struct PyModel {
    inner: ModelBundle,
}

#[pymethods]
impl PyModel {
    /// Trains a model; the tree is built from the data when not given.
    #[staticmethod]
    #[pyo3(signature = (data, config, tree=None))]
    fn train(
        py: Python<'_>,
        data: &PyDataset,
        config: &PyRunConfig,
        tree: Option<&PyLabelTree>,
    ) -> PyResult<Self> {
        let tree = tree.map(|t| t.inner.clone());
        let (data, cfg) = (&data.inner, &config.inner);
        let (inner, _) = py
            .detach(|| pipeline::train_bundle(data, tree, cfg))
            .map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ModelBundle::load(path).map(|inner| PyModel { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn tree(&self) -> PyLabelTree {
        PyLabelTree {
            inner: self.inner.model.tree.clone(),
        }
    }

    /// Top-`k` `(label, score)` pairs per instance.
    #[pyo3(signature = (data, k=5, beams=None))]
    fn predict(
        &self,
        py: Python<'_>,
        data: &PyDataset,
        k: usize,
        beams: Option<Vec<usize>>,
    ) -> PyResult<Vec<Vec<(u32, f64)>>> {
        let (bundle, ds) = (&self.inner, &data.inner);
        let preds = py
            .detach(|| pipeline::predict_dataset(bundle, ds, beams.as_deref(), k))
            .map_err(to_py)?;
        Ok(preds.into_iter().map(|p| p.labels).collect())
    }

    /// Inference shortlist recall at every shortlisting level.
    #[pyo3(signature = (data, beams=None))]
    fn recall(&self, py: Python<'_>, data: &PyDataset, beams: Option<Vec<usize>>) -> PyResult<Vec<f64>> {
        let (bundle, ds) = (&self.inner, &data.inner);
        py.detach(|| pipeline::recall(bundle, ds, beams.as_deref()))
            .map_err(to_py)
    }

    /// Metric name to value, e.g. `{"P@1": 0.93}`.
    #[pyo3(signature = (data, metrics=vec!["p@1".to_string(), "p@3".to_string(), "p@5".to_string()], a=metrics::DEFAULT_PROPENSITY_A, b=metrics::DEFAULT_PROPENSITY_B, normalize_psp=false))]
    fn evaluate(
        &self,
        py: Python<'_>,
        data: &PyDataset,
        metrics: Vec<String>,
        a: f64,
        b: f64,
        normalize_psp: bool,
    ) -> PyResult<Vec<(String, f64)>> {
        let parsed: Vec<Metric> = metrics
            .iter()
            .map(|m| m.parse::<Metric>())
            .collect::<Result<_, _>>()
            .map_err(to_py)?;
        let prop = pipeline::propensity(&self.inner, a, b).map_err(to_py)?;
        let (bundle, ds) = (&self.inner, &data.inner);
        let rows = py
            .detach(|| pipeline::evaluate(bundle, ds, &parsed, Some(&prop), normalize_psp))
            .map_err(to_py)?;
        Ok(rows.into_iter().map(|(m, v)| (m.to_string(), v)).collect())
    }
}

#[pyfunction]
fn precision_at_k(mut y: Vec<u32>, ranked: Vec<u32>, k: usize) -> PyResult<f64> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be >= 1"));
    }
    y.sort_unstable();
    Ok(metrics::precision_at_k(&y, &ranked, k))
}

#[pyfunction]
fn psp_at_k(mut y: Vec<u32>, ranked: Vec<u32>, k: usize, propensities: Vec<f64>) -> PyResult<f64> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be >= 1"));
    }
    if let Some(&l) = ranked.iter().take(k).find(|&&l| l as usize >= propensities.len()) {
        return Err(PyValueError::new_err(format!("label {} has no propensity", l)));
    }
    y.sort_unstable();
    let prop = PropensityModel {
        propensities,
        a: metrics::DEFAULT_PROPENSITY_A,
        b: metrics::DEFAULT_PROPENSITY_B,
        num_points: 0,
    };
    Ok(metrics::psp_at_k(&y, &ranked, k, &prop))
}

#[pyfunction]
#[pyo3(signature = (label_freqs, num_points, a=metrics::DEFAULT_PROPENSITY_A, b=metrics::DEFAULT_PROPENSITY_B))]
fn fit_propensity(label_freqs: Vec<usize>, num_points: usize, a: f64, b: f64) -> PyResult<Vec<f64>> {
    metrics::fit_propensity(&label_freqs, num_points, a, b)
        .map(|m| m.propensities)
        .map_err(to_py)
}

/// Per-level loss weights `|S^(t)| / |S^(1)|`.
#[pyfunction]
fn rescale_alphas(sizes: Vec<usize>) -> Vec<f64> {
    core_rescale_alphas(&sizes)
}

#[pymodule]
fn cascadexml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyLabelTree>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(psp_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(fit_propensity, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_alphas, m)?)?;
    Ok(())
}
