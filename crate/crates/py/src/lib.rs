//! Python bindings. Units, graphs and networks are opaque handles that
//! round-trip through the same JSON the CLI reads and writes; reports come
//! back as plain dicts.

use amos_core::{
    build_relu_unit as relu_closed_form, compile_graph as lower, run_stream, train_unit as fit, verify_equivalence,
    AmosUnitParams, AnnGraph, GateKind, Mode, SpikingNetwork, TargetFunction, TrainConfig, TrainError, UnitLibrary,
};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Diverged { .. } => PyArithmeticError::new_err(e.to_string()),
        e => value_err(e),
    }
}

fn loads<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn library(units: &[PyRef<'_, Unit>]) -> PyResult<UnitLibrary> {
    let mut lib = UnitLibrary::new();
    for u in units {
        lib.insert_tagged(u.inner.clone()).map_err(value_err)?;
    }
    Ok(lib)
}

/// A trained (or closed-form) AMOS unit.
#[pyclass(module = "amos", frozen)]
pub struct Unit {
    inner: AmosUnitParams,
}

#[pymethods]
impl Unit {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Unit { inner: AmosUnitParams::from_json(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn arity(&self) -> usize {
        self.inner.arity
    }

    #[getter]
    fn kind(&self) -> Option<String> {
        self.inner.kind.map(|k| k.to_string())
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[pyo3(signature = (x, x2=None))]
    fn __call__(&self, x: f64, x2: Option<f64>) -> PyResult<f64> {
        self.inner.output(x, x2).map_err(value_err)
    }

    /// Spike pattern (one bool per neuron) for one input.
    #[pyo3(signature = (x, x2=None))]
    fn spikes(&self, x: f64, x2: Option<f64>) -> PyResult<Vec<bool>> {
        Ok(self.inner.evaluate(x, x2).map_err(value_err)?.z.into_iter().map(|s| s != 0).collect())
    }

    fn __repr__(&self) -> String {
        let kind = self.inner.kind.map_or("untagged".to_string(), |k| k.to_string());
        format!("Unit({kind}, K={}, arity={})", self.inner.k, self.inner.arity)
    }
}

/// A layered ANN.
#[pyclass(module = "amos", frozen)]
pub struct Graph {
    inner: AnnGraph,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Graph { inner: AnnGraph::from_json(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    /// Reference (floating-point) forward pass.
    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        amos_core::ann_forward(&self.inner, &input).map_err(value_err)
    }

    /// Forward pass with every gate replaced by its AMOS unit.
    fn amos_forward(&self, input: Vec<f64>, units: Vec<PyRef<'_, Unit>>) -> PyResult<Vec<f64>> {
        amos_core::amos_forward(&self.inner, &library(&units)?, &input).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Graph({} nodes, {} -> {})", self.inner.nodes().len(), self.inner.input_dim(), self.inner.output_dim())
    }
}

/// A compiled spiking network.
#[pyclass(module = "amos", frozen)]
pub struct Network {
    inner: SpikingNetwork,
}

#[pymethods]
impl Network {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Network { inner: SpikingNetwork::from_json(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn latency(&self) -> usize {
        self.inner.latency
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    #[getter]
    fn neuron_count(&self) -> usize {
        self.inner.neuron_count()
    }

    #[getter]
    fn synapse_count(&self) -> usize {
        self.inner.synapse_count()
    }

    /// Stream `inputs` through the network; returns the simulation report.
    #[pyo3(signature = (inputs, mode="pipelined"))]
    fn simulate<'py>(&self, py: Python<'py>, inputs: Vec<Vec<f64>>, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode: Mode = mode.parse().map_err(value_err)?;
        let net = &self.inner;
        let report = py.detach(|| run_stream(net, &inputs, mode)).map_err(value_err)?;
        loads(py, &report.to_json())
    }

    fn __repr__(&self) -> String {
        format!("Network({} neurons, latency {})", self.inner.neuron_count(), self.inner.latency)
    }
}

/// Train a unit for `kind`; returns `(unit, per-epoch mse)`.
#[pyfunction]
#[pyo3(signature = (kind, k=None, epochs=None, lr=None, seed=None, domain=None))]
fn train_unit(
    py: Python<'_>,
    kind: &str,
    k: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    domain: Option<Vec<(f64, f64)>>,
) -> PyResult<(Unit, Vec<f64>)> {
    let kind: GateKind = kind.parse().map_err(value_err)?;
    let mut cfg = TrainConfig::for_gate(kind);
    cfg.k = k.unwrap_or(cfg.k);
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
    cfg.rng_seed = seed.unwrap_or(cfg.rng_seed);
    let target = match domain {
        Some(d) => TargetFunction::gate(kind, d.into_iter().map(|(lo, hi)| [lo, hi]).collect()).map_err(train_err)?,
        None => TargetFunction::default_for(kind),
    };
    let report = py.detach(|| fit(&target, &cfg)).map_err(train_err)?;
    Ok((Unit { inner: report.params }, report.mse_history))
}

/// Untrained ReLU unit clamping to `[0, alpha]` in `2^k` steps.
#[pyfunction]
#[pyo3(signature = (k, alpha=1.0))]
fn build_relu_unit(k: usize, alpha: f64) -> PyResult<Unit> {
    Ok(Unit { inner: relu_closed_form(k, alpha).map_err(value_err)? })
}

/// Lower `graph` with the given units; returns `(network, report)`.
#[pyfunction]
fn compile_graph<'py>(
    py: Python<'py>,
    graph: PyRef<'_, Graph>,
    units: Vec<PyRef<'_, Unit>>,
) -> PyResult<(Network, Bound<'py, PyAny>)> {
    let (net, report) = lower(&graph.inner, &library(&units)?).map_err(value_err)?;
    Ok((Network { inner: net }, loads(py, &report.to_json())?))
}

/// Compare the network against the graph on `inputs`.
#[pyfunction]
#[pyo3(signature = (graph, network, inputs, units=None))]
fn verify<'py>(
    py: Python<'py>,
    graph: PyRef<'_, Graph>,
    network: PyRef<'_, Network>,
    inputs: Vec<Vec<f64>>,
    units: Option<Vec<PyRef<'_, Unit>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let lib = units.as_deref().map(library).transpose()?;
    let report = verify_equivalence(&graph.inner, &network.inner, &inputs, lib.as_ref()).map_err(value_err)?;
    loads(py, &report.to_json())
}

#[pymodule]
fn amos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Unit>()?;
    m.add_class::<Graph>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(train_unit, m)?)?;
    m.add_function(wrap_pyfunction!(build_relu_unit, m)?)?;
    m.add_function(wrap_pyfunction!(compile_graph, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
