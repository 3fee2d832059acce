//! ANN/SNN comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::{CompileError, SpikingNetwork, UnitLibrary};
use crate::graph::{ann_forward, AnnGraph, GraphError};
use crate::sim::{run_stream, Mode, SimError};
use crate::train::{eval_mse, TargetFunction, TrainError};
use crate::unit::GateKind;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("graph and network disagree: {0}")]
    Shape(String),
    #[error("no samples to verify")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub max_abs_deviation: f64,
    pub mean_abs_deviation: f64,
    /// Fraction of samples where ANN and SNN outputs share their argmax.
    pub agreement: f64,
    /// Grid MSE of each library unit against its exact gate.
    pub unit_mse: BTreeMap<GateKind, f64>,
}

impl EquivalenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

/// Index of the first maximal entry; `None` when empty.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if best.map_or(true, |(_, b)| *x > b) {
            best = Some((i, *x));
        }
    }
    best.map(|(i, _)| i)
}

/// Grid MSE of `lib`'s unit for `kind` on its recorded domain (or the
/// kind's default domain).
pub fn unit_mse(lib: &UnitLibrary, kind: GateKind) -> Result<f64, VerifyError> {
    let p = lib.get(kind)?;
    let target = match &p.domain {
        Some(domain) => TargetFunction::gate(kind, domain.clone())?,
        None => TargetFunction::default_for(kind),
    };
    let grid = if kind.arity() == 2 { 101 } else { 1001 };
    Ok(eval_mse(p, &target, grid)?)
}

/// Runs the exact ANN and the pipelined SNN on `inputs` and compares them.
pub fn verify_equivalence(
    g: &AnnGraph,
    net: &SpikingNetwork,
    inputs: &[Vec<f64>],
    lib: Option<&UnitLibrary>,
) -> Result<EquivalenceReport, VerifyError> {
    if inputs.is_empty() {
        return Err(VerifyError::Empty);
    }
    if g.input_dim() != net.input_dim || g.output_dim() != net.output_dim() {
        return Err(VerifyError::Shape(format!(
            "graph maps {} -> {}, network maps {} -> {}",
            g.input_dim(),
            g.output_dim(),
            net.input_dim,
            net.output_dim()
        )));
    }
    let sim = run_stream(net, inputs, Mode::Pipelined)?;
    let mut max_dev = 0.0f64;
    let mut sum_dev = 0.0;
    let mut count = 0usize;
    let mut agree = 0usize;
    for (x, snn) in inputs.iter().zip(&sim.outputs) {
        let ann = ann_forward(g, x)?;
        for (a, s) in ann.iter().zip(snn) {
            let d = (a - s).abs();
            max_dev = max_dev.max(d);
            sum_dev += d;
            count += 1;
        }
        if argmax(&ann) == argmax(snn) {
            agree += 1;
        }
    }
    let mut unit_mses = BTreeMap::new();
    if let Some(lib) = lib {
        for kind in lib.kinds() {
            unit_mses.insert(kind, unit_mse(lib, kind)?);
        }
    }
    Ok(EquivalenceReport {
        samples: inputs.len(),
        max_abs_deviation: max_dev,
        mean_abs_deviation: if count == 0 { 0.0 } else { sum_dev / count as f64 },
        agreement: agree as f64 / inputs.len() as f64,
        unit_mse: unit_mses,
    })
}
