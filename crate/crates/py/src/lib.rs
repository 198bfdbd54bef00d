//! Python bindings: kernels, sampled graphs, electrical networks and the
//! experiment runner.

use std::path::PathBuf;

use perclab_core::config::Config;
use perclab_core::network::Conductance;
use perclab_core::regularity::{mc_check_connection, mc_check_regularity};
use perclab_cli::Experiment;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Connection kernel.
#[pyclass(name = "Kernel", module = "perclab", frozen)]
struct PyKernel {
    inner: perclab_core::KernelSpec,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn long_range(dim: usize, beta: f64, delta: f64) -> PyResult<Self> {
        Ok(PyKernel { inner: perclab_core::KernelSpec::long_range(dim, beta, delta).map_err(err)? })
    }

    #[staticmethod]
    fn scale_free(dim: usize, beta: f64, gamma: f64, delta: f64) -> PyResult<Self> {
        Ok(PyKernel { inner: perclab_core::KernelSpec::scale_free(dim, beta, gamma, delta).map_err(err)? })
    }

    #[staticmethod]
    fn bernoulli_nn(dim: usize, p: f64) -> PyResult<Self> {
        Ok(PyKernel { inner: perclab_core::KernelSpec::bernoulli_nn(dim, p).map_err(err)? })
    }

    /// Kernel from the `kernel { ... }` section of a config text.
    #[staticmethod]
    #[pyo3(signature = (text, dim = 2))]
    fn from_config(text: &str, dim: usize) -> PyResult<Self> {
        let c = Config::parse(text).map_err(err)?;
        let s = c.require_section("kernel").map_err(err)?;
        Ok(PyKernel { inner: perclab_core::KernelSpec::from_section(s, dim).map_err(err)? })
    }

    fn phi(&self, s: f64, t: f64, r: f64) -> PyResult<f64> {
        self.inner.eval_phi(s, t, r).map_err(err)
    }

    fn edge_prob(&self, s: f64, t: f64, r: f64) -> PyResult<f64> {
        self.inner.edge_prob(s, t, r).map_err(err)
    }

    fn mark_integral(&self, r: f64, mu: f64) -> PyResult<f64> {
        self.inner.mark_integral(r, mu).map_err(err)
    }

    /// `(slope, residual)` of the effective decay exponent fit.
    #[pyo3(signature = (mu, r0 = 100.0, ratio = 4.0, points = 6))]
    fn delta_eff(&self, mu: f64, r0: f64, ratio: f64, points: usize) -> PyResult<(f64, f64)> {
        let grid = perclab_core::RGrid::new(r0, ratio, points).map_err(err)?;
        let e = self.inner.estimate_delta_eff(mu, &grid).map_err(err)?;
        Ok((e.slope, e.residual))
    }

    fn connection_check<'py>(
        &self,
        py: Python<'py>,
        v: usize,
        mu: f64,
        distance: f64,
        trials: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = mc_check_connection(&self.inner, v, mu, distance, trials, seed).map_err(err)?;
        json_to_py(py, &r.to_json())
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Point source plus kernel, read from a config text.
#[pyclass(name = "Model", module = "perclab", frozen)]
struct PyModel {
    inner: perclab_core::ModelConfig,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let c = Config::parse(config).map_err(err)?;
        Ok(PyModel { inner: perclab_core::ModelConfig::from_config(&c).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[pyo3(signature = (n, seed, palm = false))]
    fn sample_graph(&self, n: f64, seed: u64, palm: bool) -> PyResult<PyGraph> {
        Ok(PyGraph { inner: self.inner.sample_graph(n, seed, palm).map_err(err)? })
    }
}

/// Sampled geometric graph.
#[pyclass(name = "Graph", module = "perclab", frozen)]
struct PyGraph {
    inner: perclab_core::GeoGraph,
}

#[pymethods]
impl PyGraph {
    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        (0..self.inner.vertex_count()).map(|i| self.inner.cloud().point(i).to_vec()).collect()
    }

    fn marks(&self) -> Vec<f64> {
        (0..self.inner.vertex_count()).map(|i| self.inner.mark(i)).collect()
    }

    /// `(i, j, length)` triples.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.edges().iter().map(|e| (e.a, e.b, e.length)).collect()
    }

    fn degree(&self, v: usize) -> PyResult<usize> {
        if v >= self.inner.vertex_count() {
            return Err(err(format!("vertex {v} out of range")));
        }
        Ok(self.inner.degree(v))
    }

    /// Component label per vertex.
    fn components(&self) -> Vec<usize> {
        perclab_core::clusters::components(&self.inner).labels().to_vec()
    }

    fn largest_component_size(&self) -> usize {
        perclab_core::clusters::components(&self.inner).largest().map_or(0, |(_, s)| s)
    }

    fn bond_percolate(&self, p: f64, seed: u64) -> PyResult<PyGraph> {
        Ok(PyGraph { inner: self.inner.bond_percolate(p, seed).map_err(err)? })
    }

    fn truncate(&self, ell: f64) -> PyResult<PyGraph> {
        Ok(PyGraph { inner: self.inner.truncate(ell).map_err(err)? })
    }

    /// Electrical network with unit conductances, or `length ** -exponent` when an exponent is given.
    #[pyo3(signature = (exponent = None))]
    fn network(&self, exponent: Option<f64>) -> PyResult<PyNetwork> {
        let c = match exponent {
            Some(exponent) => Conductance::LengthPower { exponent },
            None => Conductance::Unit,
        };
        Ok(PyNetwork { inner: perclab_core::Network::from_graph(&self.inner, c).map_err(err)? })
    }
}

/// Weighted graph for conductance computations.
#[pyclass(name = "Network", module = "perclab", frozen)]
struct PyNetwork {
    inner: perclab_core::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(PyNetwork { inner: perclab_core::Network::new(n, edges).map_err(err)? })
    }

    #[staticmethod]
    fn lattice(side: usize, dim: usize) -> PyResult<Self> {
        Ok(PyNetwork { inner: perclab_core::Network::lattice(side, dim).map_err(err)? })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    fn distances(&self, v: usize) -> PyResult<Vec<usize>> {
        self.inner.distances(v).map_err(err)
    }

    /// Conductance from `v` to everything beyond hop distance `n`.
    fn effective_conductance(&self, v: usize, n: usize) -> PyResult<f64> {
        self.inner.effective_conductance(v, n).map_err(err)
    }

    /// Curve over the radii `ns`, or automatic radii when omitted.
    #[pyo3(signature = (v, ns = None))]
    fn transience_probe<'py>(&self, py: Python<'py>, v: usize, ns: Option<Vec<usize>>) -> PyResult<Bound<'py, PyDict>> {
        let ns = match ns {
            Some(ns) => ns,
            None => perclab_cli::auto_radii(&self.inner, v).map_err(err)?,
        };
        let c = self.inner.transience_probe(v, &ns).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("ns", c.ns)?;
        d.set_item("values", c.values)?;
        d.set_item("residuals", c.residuals)?;
        d.set_item("flag", c.flag.to_string())?;
        d.set_item("monotone", c.monotone)?;
        Ok(d)
    }
}

fn experiment(name: &str) -> PyResult<Experiment> {
    name.parse().map_err(err)
}

/// Run an experiment in memory; returns `{file name: contents}`.
#[pyfunction]
#[pyo3(signature = (name, config, seed = perclab_cli::DEFAULT_SEED))]
fn execute<'py>(py: Python<'py>, name: &str, config: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let c = Config::parse(config).map_err(err)?;
    let exp = experiment(name)?;
    let outputs = py.detach(|| perclab_cli::execute(exp, &c, seed)).map_err(err)?;
    let d = PyDict::new(py);
    for o in outputs {
        d.set_item(o.name, o.contents)?;
    }
    Ok(d)
}

/// Run an experiment and write outputs plus `manifest.json` into `out`; returns the manifest.
#[pyfunction]
#[pyo3(signature = (name, config, out, seed = None))]
fn run<'py>(py: Python<'py>, name: &str, config: &str, out: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let exp = experiment(name)?;
    let m = py.detach(|| perclab_cli::run(exp, config, seed, &out)).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&m).map_err(err)?)
}

#[pyfunction]
fn validate<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let c = Config::parse(config).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&perclab_cli::validate(&c)).map_err(err)?)
}

#[pyfunction]
fn regularity_check<'py>(py: Python<'py>, n: usize, mu: f64, trials: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let r = py.detach(|| mc_check_regularity(n, mu, trials, seed)).map_err(err)?;
    json_to_py(py, &r.to_json())
}

#[pymodule]
fn perclab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", perclab_core::VERSION)?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(regularity_check, m)?)?;
    Ok(())
}
