//! Lowering of ANN graphs to clocked threshold-gate networks.
//!
//! Every nonlinear gate of the graph becomes an AMOS unit of `K` threshold
//! gates. Linear nodes (dense, add, pooling) own no neurons: they are folded
//! into weighted sums evaluated at *taps*, the analog input points of the
//! units downstream, and into the readout.
//!
//! Timing, for a unit whose taps settle at step `ω`:
//!
//! * a tap sums whatever arrives at step `ω` and passes it on immediately;
//! * gate `i` (1-based) reads its taps through delay `i` and earlier gate `j`
//!   through delay `i - j`, so it fires at `ω + i`;
//! * gate `i` reaches the next tap or readout through delay `K - i + 1`, plus
//!   padding when the other operands of that sum are later.
//!
//! All contributions of a unit therefore land at `ω + K + 1`, and every path
//! into a node carries the same total delay. That balance is what allows a
//! new input on every step.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{expand_se_blocks, forward_with, ActivationKind, AnnGraph, GraphError, NodeId, Op};
use crate::unit::{AmosUnitParams, GateKind, UnitError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("network has a cycle through {0}")]
    Cycle(String),
    #[error("unbalanced delays into {node}: paths arrive at steps {first} and {second}")]
    Unbalanced { node: String, first: usize, second: usize },
    #[error("declared latency {declared} but readout settles at step {actual}")]
    Latency { declared: usize, actual: usize },
    #[error("malformed network document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("unit library has no `{0}` unit")]
    MissingUnit(GateKind),
    #[error("library unit for `{kind}`: {message}")]
    BadUnit { kind: GateKind, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Where a synapse reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Analog network input.
    Input(usize),
    /// Analog weighted sum.
    Tap(usize),
    /// Binary spike of a threshold gate.
    Gate(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub src: Source,
    pub w: f64,
    pub delay: usize,
}

/// Analog summing point: the value of a tap at step `t` is
/// `Σ w · src(t - delay)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub id: usize,
    pub synapses: Vec<Synapse>,
}

/// Fires at `t` iff `Σ w · src(t - delay) - threshold >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub id: usize,
    pub threshold: f64,
    pub synapses: Vec<Synapse>,
}

/// One analog network output, `bias + Σ w · src(t - delay)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutLine {
    pub bias: f64,
    pub synapses: Vec<Synapse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingNetwork {
    pub input_dim: usize,
    pub input_taps: Vec<Tap>,
    pub gates: Vec<Gate>,
    pub readout: Vec<ReadoutLine>,
    /// Steps from presenting an input to its readout.
    pub latency: usize,
}

/// A tap or gate, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetNode {
    Tap(usize),
    Gate(usize),
}

/// Step at which each element processes wavefront 0, i.e. the input
/// presented at step 0. `None` where nothing input-driven arrives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOffsets {
    pub taps: Vec<Option<usize>>,
    pub gates: Vec<Option<usize>>,
    pub readout: Vec<Option<usize>>,
}

impl SpikingNetwork {
    pub fn neuron_count(&self) -> usize {
        self.gates.len()
    }

    pub fn synapse_count(&self) -> usize {
        self.input_taps.iter().map(|t| t.synapses.len()).sum::<usize>()
            + self.gates.iter().map(|g| g.synapses.len()).sum::<usize>()
            + self.readout.iter().map(|r| r.synapses.len()).sum::<usize>()
    }

    pub fn output_dim(&self) -> usize {
        self.readout.len()
    }

    fn all_synapses(&self) -> impl Iterator<Item = &Synapse> {
        self.input_taps
            .iter()
            .flat_map(|t| &t.synapses)
            .chain(self.gates.iter().flat_map(|g| &g.synapses))
            .chain(self.readout.iter().flat_map(|r| &r.synapses))
    }

    /// Largest delay on any synapse leaving each input, tap and gate.
    pub(crate) fn max_outgoing_delays(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut inputs = vec![0; self.input_dim];
        let mut taps = vec![0; self.input_taps.len()];
        let mut gates = vec![0; self.gates.len()];
        for s in self.all_synapses() {
            let slot = match s.src {
                Source::Input(i) => &mut inputs[i],
                Source::Tap(i) => &mut taps[i],
                Source::Gate(i) => &mut gates[i],
            };
            *slot = (*slot).max(s.delay);
        }
        (inputs, taps, gates)
    }

    /// Structural checks: indices, finiteness, acyclicity, delay balance and
    /// the declared latency.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let invalid = |m: String| Err(NetworkError::Invalid(m));
        for (i, t) in self.input_taps.iter().enumerate() {
            if t.id != i {
                return invalid(format!("tap at position {i} has id {}", t.id));
            }
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.id != i {
                return invalid(format!("gate at position {i} has id {}", g.id));
            }
            if !g.threshold.is_finite() {
                return invalid(format!("gate {i} has non-finite threshold"));
            }
        }
        for r in &self.readout {
            if !r.bias.is_finite() {
                return invalid("readout bias is not finite".into());
            }
        }
        for s in self.all_synapses() {
            let ok = match s.src {
                Source::Input(i) => i < self.input_dim,
                Source::Tap(i) => i < self.input_taps.len(),
                Source::Gate(i) => i < self.gates.len(),
            };
            if !ok {
                return invalid(format!("synapse source {:?} does not exist", s.src));
            }
            if !s.w.is_finite() {
                return invalid(format!("synapse from {:?} has non-finite weight", s.src));
            }
        }
        let offsets = self.stage_offsets()?;
        if let Some(actual) = offsets.readout.iter().flatten().find(|&&o| o != self.latency) {
            return Err(NetworkError::Latency { declared: self.latency, actual: *actual });
        }
        Ok(())
    }

    /// Taps and gates ordered so every source precedes its consumers.
    pub fn topological_order(&self) -> Result<Vec<NetNode>, NetworkError> {
        let nt = self.input_taps.len();
        let idx = |n: NetNode| match n {
            NetNode::Tap(i) => i,
            NetNode::Gate(i) => nt + i,
        };
        let node_at = |k: usize| if k < nt { NetNode::Tap(k) } else { NetNode::Gate(k - nt) };
        let total = nt + self.gates.len();
        let mut indegree = vec![0usize; total];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); total];
        let incoming = |k: usize| match node_at(k) {
            NetNode::Tap(i) => &self.input_taps[i].synapses,
            NetNode::Gate(i) => &self.gates[i].synapses,
        };
        for k in 0..total {
            for s in incoming(k) {
                let src = match s.src {
                    Source::Input(_) => continue,
                    Source::Tap(i) => idx(NetNode::Tap(i)),
                    Source::Gate(i) => idx(NetNode::Gate(i)),
                };
                indegree[k] += 1;
                consumers[src].push(k);
            }
        }
        let mut queue: VecDeque<usize> = (0..total).filter(|&k| indegree[k] == 0).collect();
        let mut order = Vec::with_capacity(total);
        while let Some(k) = queue.pop_front() {
            order.push(node_at(k));
            for &c in &consumers[k] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() != total {
            let stuck = (0..total).find(|&k| indegree[k] > 0).expect("some node is on a cycle");
            return Err(NetworkError::Cycle(format!("{:?}", node_at(stuck))));
        }
        Ok(order)
    }

    /// Derives stage offsets by pushing step 0 from the inputs through every
    /// synapse. Two paths reaching a node at different steps is an error.
    pub fn stage_offsets(&self) -> Result<StageOffsets, NetworkError> {
        let order = self.topological_order()?;
        let mut taps = vec![None; self.input_taps.len()];
        let mut gates = vec![None; self.gates.len()];
        let arrival = |synapses: &[Synapse], taps: &[Option<usize>], gates: &[Option<usize>], name: String| {
            let mut agreed: Option<usize> = None;
            for s in synapses {
                let src = match s.src {
                    Source::Input(_) => Some(0),
                    Source::Tap(i) => taps[i],
                    Source::Gate(i) => gates[i],
                };
                if let Some(at) = src.map(|o| o + s.delay) {
                    match agreed {
                        None => agreed = Some(at),
                        Some(first) if first != at => {
                            return Err(NetworkError::Unbalanced { node: name, first, second: at })
                        }
                        _ => {}
                    }
                }
            }
            Ok(agreed)
        };
        for node in order {
            match node {
                NetNode::Tap(i) => taps[i] = arrival(&self.input_taps[i].synapses, &taps, &gates, format!("tap {i}"))?,
                NetNode::Gate(i) => gates[i] = arrival(&self.gates[i].synapses, &taps, &gates, format!("gate {i}"))?,
            }
        }
        let readout = self
            .readout
            .iter()
            .enumerate()
            .map(|(i, r)| arrival(&r.synapses, &taps, &gates, format!("readout {i}")))
            .collect::<Result<_, _>>()?;
        Ok(StageOffsets { taps, gates, readout })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let net: SpikingNetwork = serde_json::from_str(text).map_err(|e| NetworkError::Document(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }
}

/// Set of delay values used anywhere in `net`.
pub fn distinct_delays(net: &SpikingNetwork) -> BTreeSet<usize> {
    net.all_synapses().map(|s| s.delay).collect()
}

/// One shared parameter set per gate kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitLibrary {
    units: BTreeMap<GateKind, AmosUnitParams>,
}

impl UnitLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `params` under `kind`, replacing any previous unit.
    pub fn insert(&mut self, kind: GateKind, params: AmosUnitParams) -> Result<(), CompileError> {
        params.validate()?;
        if params.arity != kind.arity() {
            return Err(CompileError::BadUnit {
                kind,
                message: format!("arity {} does not match the kind's arity {}", params.arity, kind.arity()),
            });
        }
        if let Some(tagged) = params.kind {
            if tagged != kind {
                return Err(CompileError::BadUnit { kind, message: format!("parameters are tagged `{tagged}`") });
            }
        }
        self.units.insert(kind, params);
        Ok(())
    }

    /// Registers a unit under the kind recorded in its parameters.
    pub fn insert_tagged(&mut self, params: AmosUnitParams) -> Result<GateKind, CompileError> {
        let kind = params
            .kind
            .ok_or_else(|| CompileError::Unit(UnitError::Invalid("unit parameters carry no `kind`".into())))?;
        self.insert(kind, params)?;
        Ok(kind)
    }

    pub fn get(&self, kind: GateKind) -> Result<&AmosUnitParams, CompileError> {
        self.units.get(&kind).ok_or(CompileError::MissingUnit(kind))
    }

    pub fn kinds(&self) -> impl Iterator<Item = GateKind> + '_ {
        self.units.keys().copied()
    }

    pub fn k_map(&self) -> BTreeMap<GateKind, usize> {
        self.units.iter().map(|(k, p)| (*k, p.k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub node_id: NodeId,
    pub kind: GateKind,
    pub units: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Steps from a unit's taps to its contribution downstream: `K + 1`.
    pub latency: usize,
    /// Step at which this layer's taps settle for wavefront 0.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    /// Converted ANN gates, i.e. AMOS unit instances.
    pub gate_count: usize,
    pub neuron_count: usize,
    pub synapse_count: usize,
    pub tap_count: usize,
    pub layers: Vec<LayerReport>,
    pub latency: usize,
    pub unit_k: BTreeMap<GateKind, usize>,
    /// AMOS parameters, counted once per kind since instances share them.
    pub shared_parameter_count: usize,
}

impl ConversionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

/// Linear combination of sources plus a constant.
#[derive(Debug, Clone, Default, PartialEq)]
struct Expr {
    terms: BTreeMap<Source, f64>,
    bias: f64,
}

impl Expr {
    fn source(s: Source) -> Self {
        Expr { terms: BTreeMap::from([(s, 1.0)]), bias: 0.0 }
    }

    fn add_scaled(&mut self, other: &Expr, scale: f64) {
        for (s, w) in &other.terms {
            *self.terms.entry(*s).or_insert(0.0) += scale * w;
        }
        self.bias += scale * other.bias;
    }
}

/// One operand of a standalone unit: `bias + Σ w · input[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fanin {
    pub terms: Vec<(usize, f64)>,
    pub bias: f64,
}

impl Fanin {
    /// Network input `i`, unscaled.
    pub fn input(i: usize) -> Self {
        Fanin { terms: vec![(i, 1.0)], bias: 0.0 }
    }
}

struct Builder {
    taps: Vec<Tap>,
    gates: Vec<Gate>,
    /// Step at which each gate fires for wavefront 0.
    fire: Vec<usize>,
    /// Step at which each gate's contribution is due downstream.
    due: Vec<usize>,
}

impl Builder {
    fn new() -> Self {
        Builder { taps: Vec::new(), gates: Vec::new(), fire: Vec::new(), due: Vec::new() }
    }

    fn timing(&self, s: Source) -> (usize, usize) {
        match s {
            Source::Input(_) => (0, 0),
            Source::Gate(g) => (self.fire[g], self.due[g]),
            Source::Tap(_) => unreachable!("expressions never reference taps"),
        }
    }

    fn settle_time<'a>(&self, exprs: impl IntoIterator<Item = &'a Expr>) -> usize {
        exprs.into_iter().flat_map(|e| e.terms.keys()).map(|s| self.timing(*s).1).max().unwrap_or(0)
    }

    /// Synapses delivering `e` at step `at`, padding early terms.
    fn wire(&self, e: &Expr, at: usize) -> Vec<Synapse> {
        e.terms.iter().map(|(s, w)| Synapse { src: *s, w: *w, delay: at - self.timing(*s).0 }).collect()
    }

    /// Instantiates one unit on `operands`; returns its output expression and
    /// the step at which its taps settle.
    fn add_unit(&mut self, p: &AmosUnitParams, operands: &[Expr]) -> (Expr, usize) {
        debug_assert_eq!(operands.len(), p.arity);
        let omega = self.settle_time(operands);
        let tap_ids: Vec<usize> = operands
            .iter()
            .map(|e| {
                let id = self.taps.len();
                let synapses = self.wire(e, omega);
                self.taps.push(Tap { id, synapses });
                id
            })
            .collect();
        let first = self.gates.len();
        let mut out = Expr::default();
        for i in 0..p.k {
            let coeffs = std::iter::once(p.c[i]).chain(p.c2.as_ref().map(|c2| c2[i]));
            let mut threshold = p.t[i];
            let mut synapses = Vec::with_capacity(p.arity + i);
            for ((coef, tap), e) in coeffs.zip(&tap_ids).zip(operands) {
                threshold -= coef * e.bias;
                synapses.push(Synapse { src: Source::Tap(*tap), w: coef, delay: i + 1 });
            }
            for j in 0..i {
                synapses.push(Synapse { src: Source::Gate(first + j), w: -p.h_at(i, j), delay: i - j });
            }
            self.gates.push(Gate { id: first + i, threshold, synapses });
            self.fire.push(omega + i + 1);
            self.due.push(omega + p.k + 1);
            out.terms.insert(Source::Gate(first + i), p.d[i]);
        }
        (out, omega)
    }

    fn finish(self, input_dim: usize, outputs: &[Expr]) -> SpikingNetwork {
        let latency = self.settle_time(outputs);
        let readout = outputs.iter().map(|e| ReadoutLine { bias: e.bias, synapses: self.wire(e, latency) }).collect();
        SpikingNetwork { input_dim, input_taps: self.taps, gates: self.gates, readout, latency }
    }
}

/// Compiles a single unit reading its operands from network inputs; the
/// readout is the unit output `y`.
pub fn compile_unit(params: &AmosUnitParams, fanin: &[Fanin]) -> Result<SpikingNetwork, CompileError> {
    params.validate()?;
    if fanin.len() != params.arity {
        return Err(UnitError::ArityMismatch { expected: params.arity, got: fanin.len() }.into());
    }
    let input_dim = fanin.iter().flat_map(|f| &f.terms).map(|(i, _)| i + 1).max().unwrap_or(0);
    let operands: Vec<Expr> = fanin
        .iter()
        .map(|f| {
            let mut e = Expr { terms: BTreeMap::new(), bias: f.bias };
            for (i, w) in &f.terms {
                *e.terms.entry(Source::Input(*i)).or_insert(0.0) += w;
            }
            e
        })
        .collect();
    let mut b = Builder::new();
    let (out, _) = b.add_unit(params, &operands);
    Ok(b.finish(input_dim, &[out]))
}

/// Lowers `g` (SE blocks are expanded first) onto units from `lib`.
pub fn compile_graph(g: &AnnGraph, lib: &UnitLibrary) -> Result<(SpikingNetwork, ConversionReport), CompileError> {
    let g = expand_se_blocks(g);
    for kind in g.gate_kinds() {
        lib.get(kind)?;
    }
    let mut b = Builder::new();
    let mut values: Vec<Vec<Expr>> = Vec::with_capacity(g.nodes().len());
    let mut layers = Vec::new();
    let mut used = BTreeSet::new();
    for node in g.nodes() {
        let arg = |k: usize| &values[g.position(node.inputs[k])];
        let mut lower = |b: &mut Builder, kind: GateKind, operands: Vec<Vec<&Expr>>| -> Result<Vec<Expr>, CompileError> {
            let p = lib.get(kind)?;
            used.insert(kind);
            let mut start = usize::MAX;
            let out: Vec<Expr> = operands
                .iter()
                .map(|ops| {
                    let owned: Vec<Expr> = ops.iter().map(|e| (*e).clone()).collect();
                    let (e, omega) = b.add_unit(p, &owned);
                    start = start.min(omega);
                    e
                })
                .collect();
            layers.push(LayerReport { node_id: node.id, kind, units: out.len(), k: p.k, latency: p.k + 1, start });
            Ok(out)
        };
        let out = match &node.op {
            Op::Input { dim } => (0..*dim).map(|i| Expr::source(Source::Input(i))).collect(),
            Op::Dense(layer) => {
                let x = arg(0);
                layer
                    .weight
                    .iter()
                    .zip(&layer.bias)
                    .map(|(row, bias)| {
                        let mut e = Expr { terms: BTreeMap::new(), bias: 0.0 };
                        for (w, xe) in row.iter().zip(x) {
                            e.add_scaled(xe, *w);
                        }
                        e.bias += bias;
                        e
                    })
                    .collect()
            }
            Op::Activation(ActivationKind::Identity) | Op::Output => arg(0).clone(),
            Op::Activation(a) => {
                let kind = a.gate().expect("identity handled above");
                lower(&mut b, kind, arg(0).iter().map(|e| vec![e]).collect())?
            }
            Op::Add => arg(0)
                .iter()
                .zip(arg(1))
                .map(|(x, y)| {
                    let mut e = x.clone();
                    e.add_scaled(y, 1.0);
                    e
                })
                .collect(),
            Op::Multiply => lower(&mut b, GateKind::Mult, arg(0).iter().zip(arg(1)).map(|(x, y)| vec![x, y]).collect())?,
            Op::GlobalAvgPool { groups } => {
                let x = arg(0);
                let size = x.len() / groups;
                let scale = 1.0 / size as f64;
                x.chunks(size)
                    .map(|chunk| {
                        let mut e = Expr::default();
                        for xe in chunk {
                            e.add_scaled(xe, scale);
                        }
                        e
                    })
                    .collect()
            }
            Op::SeBlock(_) => unreachable!("SE blocks were expanded"),
        };
        values.push(out);
    }
    let outputs = &values[g.position(g.output_id())];
    let net = b.finish(g.input_dim(), outputs);
    net.validate()?;
    let unit_k: BTreeMap<GateKind, usize> = used.iter().map(|k| (*k, lib.get(*k).expect("checked").k)).collect();
    let shared_parameter_count = used.iter().map(|k| lib.get(*k).expect("checked").parameter_count()).sum();
    let report = ConversionReport {
        gate_count: layers.iter().map(|l| l.units).sum(),
        neuron_count: net.neuron_count(),
        synapse_count: net.synapse_count(),
        tap_count: net.input_taps.len(),
        layers,
        latency: net.latency,
        unit_k,
        shared_parameter_count,
    };
    Ok((net, report))
}

/// Reference semantics of a compiled graph: the graph evaluated with every
/// gate replaced by its library unit.
pub fn amos_forward(g: &AnnGraph, lib: &UnitLibrary, input: &[f64]) -> Result<Vec<f64>, CompileError> {
    let mut missing = None;
    let out = forward_with(g, input, |kind, args| {
        let p = match lib.get(kind) {
            Ok(p) => p,
            Err(_) => {
                missing = Some(kind);
                return Err(GraphError::Structure(format!("no `{kind}` unit")));
            }
        };
        Ok(p.output(args[0], args.get(1).copied())?)
    });
    match (out, missing) {
        (_, Some(kind)) => Err(CompileError::MissingUnit(kind)),
        (out, None) => Ok(out?),
    }
}
