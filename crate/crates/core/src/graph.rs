//! Layered ANN graphs: the source networks that get lowered to spiking
//! threshold-gate networks.
//!
//! A graph is an ordered list of nodes in which every node only refers to
//! nodes listed before it. Convolutions are expected to arrive as dense
//! layers over flattened patches, batch norm already folded into the
//! weights and max pooling replaced by average pooling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::unit::{reference_activation, GateKind, UnitError};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node {node}: field `{field}`: {message}")]
    Schema { node: usize, field: String, message: String },
    #[error("malformed graph document: {0}")]
    Document(String),
    #[error("node {id}: {message}")]
    Dimension { id: NodeId, message: String },
    #[error("node {id} refers to unknown node {missing}")]
    UnknownNode { id: NodeId, missing: NodeId },
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("cycle through node {0}")]
    Cycle(NodeId),
    #[error("node {id} refers to node {pred}, which is listed after it")]
    Order { id: NodeId, pred: NodeId },
    #[error("{0}")]
    Structure(String),
    #[error("input has dimension {got}, graph expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Unit(#[from] UnitError),
}

/// Activation applied elementwise by an `Activation` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Swish,
    Identity,
}

impl ActivationKind {
    /// The spiking unit kind this activation lowers to; `None` for identity.
    pub fn gate(self) -> Option<GateKind> {
        match self {
            ActivationKind::Relu => Some(GateKind::Relu),
            ActivationKind::Sigmoid => Some(GateKind::Sigmoid),
            ActivationKind::Swish => Some(GateKind::Swish),
            ActivationKind::Identity => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Swish => "swish",
            ActivationKind::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "swish" => Ok(ActivationKind::Swish),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        DenseLayer { weight, bias }
    }

    pub fn identity(n: usize) -> Self {
        let weight = (0..n).map(|r| (0..n).map(|c| f64::from(u8::from(r == c))).collect()).collect();
        DenseLayer { weight, bias: vec![0.0; n] }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    fn check(&self, what: &str) -> Result<(), String> {
        if self.weight.is_empty() || self.in_dim() == 0 {
            return Err(format!("{what} weight matrix is empty"));
        }
        if self.weight.iter().any(|row| row.len() != self.in_dim()) {
            return Err(format!("{what} weight rows have unequal lengths"));
        }
        if self.bias.len() != self.out_dim() {
            return Err(format!("{what} bias has length {}, weight has {} rows", self.bias.len(), self.out_dim()));
        }
        if self.weight.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(format!("{what} contains non-finite values"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// `self ∘ inner`: `W = W_self W_inner`, `b = W_self b_inner + b_self`.
    pub fn compose(&self, inner: &DenseLayer) -> DenseLayer {
        let weight = self
            .weight
            .iter()
            .map(|row| {
                (0..inner.in_dim())
                    .map(|c| row.iter().zip(&inner.weight).map(|(w, irow)| w * irow[c]).sum())
                    .collect()
            })
            .collect();
        let bias = self.apply(&inner.bias);
        DenseLayer { weight, bias }
    }
}

/// Squeeze-and-excitation macro: pool the trunk per channel, project down,
/// optionally activate, project back up, squash with a sigmoid and gate the
/// trunk with the result.
///
/// The trunk of dimension `D` holds `groups` channels of `D / groups`
/// contiguous positions each; the channel gate is replicated over positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeBlock {
    pub groups: usize,
    pub reduce: DenseLayer,
    pub expand: DenseLayer,
    pub inner_activation: ActivationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { dim: usize },
    Dense(DenseLayer),
    Activation(ActivationKind),
    Add,
    Multiply,
    /// Mean over each of `groups` contiguous equal slices.
    GlobalAvgPool { groups: usize },
    SeBlock(SeBlock),
    Output,
}

impl Op {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Dense(_) => "dense",
            Op::Activation(_) => "activation",
            Op::Add => "add",
            Op::Multiply => "multiply",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::SeBlock(_) => "se_block",
            Op::Output => "output",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Input { .. } => 0,
            Op::Add | Op::Multiply => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// A validated, immutable ANN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnGraph {
    nodes: Vec<Node>,
    input_dim: usize,
    output_id: NodeId,
    dims: Vec<usize>,
    index: BTreeMap<NodeId, usize>,
}

impl AnnGraph {
    pub fn new(nodes: Vec<Node>, output_id: NodeId) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (pos, node) in nodes.iter().enumerate() {
            if index.insert(node.id, pos).is_some() {
                return Err(GraphError::DuplicateId(node.id));
            }
        }
        for node in &nodes {
            if node.inputs.len() != node.op.arity() {
                return Err(GraphError::Structure(format!(
                    "node {} ({}) needs {} input(s), has {}",
                    node.id,
                    node.op.kind_name(),
                    node.op.arity(),
                    node.inputs.len()
                )));
            }
            for pred in &node.inputs {
                if !index.contains_key(pred) {
                    return Err(GraphError::UnknownNode { id: node.id, missing: *pred });
                }
            }
        }
        if let Some(id) = find_cycle(&nodes, &index) {
            return Err(GraphError::Cycle(id));
        }
        for (pos, node) in nodes.iter().enumerate() {
            if let Some(pred) = node.inputs.iter().find(|p| index[p] >= pos) {
                return Err(GraphError::Order { id: node.id, pred: *pred });
            }
        }

        let inputs: Vec<&Node> = nodes.iter().filter(|n| matches!(n.op, Op::Input { .. })).collect();
        let input_dim = match inputs.as_slice() {
            [n] => match n.op {
                Op::Input { dim } if dim > 0 => dim,
                _ => return Err(GraphError::Dimension { id: n.id, message: "input dimension must be positive".into() }),
            },
            _ => return Err(GraphError::Structure(format!("graph needs exactly one input node, has {}", inputs.len()))),
        };
        match index.get(&output_id).map(|&i| &nodes[i].op) {
            Some(Op::Output) => {}
            Some(_) => return Err(GraphError::Structure(format!("output_id {output_id} is not an output node"))),
            None => return Err(GraphError::Structure(format!("output_id {output_id} does not exist"))),
        }

        let mut dims = Vec::with_capacity(nodes.len());
        for node in &nodes {
            let pred = |k: usize| dims[index[&node.inputs[k]]];
            let dim_err = |message: String| GraphError::Dimension { id: node.id, message };
            let dim = match &node.op {
                Op::Input { dim } => *dim,
                Op::Dense(layer) => {
                    layer.check("dense").map_err(dim_err)?;
                    if layer.in_dim() != pred(0) {
                        return Err(dim_err(format!("dense expects {} inputs, predecessor has {}", layer.in_dim(), pred(0))));
                    }
                    layer.out_dim()
                }
                Op::Activation(_) | Op::Output => pred(0),
                Op::Add | Op::Multiply => {
                    if pred(0) != pred(1) {
                        return Err(dim_err(format!("operands have dimensions {} and {}", pred(0), pred(1))));
                    }
                    pred(0)
                }
                Op::GlobalAvgPool { groups } => {
                    if *groups == 0 || pred(0) % groups != 0 {
                        return Err(dim_err(format!("cannot pool dimension {} into {groups} groups", pred(0))));
                    }
                    *groups
                }
                Op::SeBlock(se) => {
                    let d = pred(0);
                    if se.groups == 0 || d % se.groups != 0 {
                        return Err(dim_err(format!("cannot pool dimension {d} into {} groups", se.groups)));
                    }
                    se.reduce.check("reduce").map_err(dim_err)?;
                    se.expand.check("expand").map_err(dim_err)?;
                    if se.reduce.in_dim() != se.groups
                        || se.expand.in_dim() != se.reduce.out_dim()
                        || se.expand.out_dim() != se.groups
                    {
                        return Err(dim_err(format!(
                            "SE projections must map {g} -> r -> {g}, got {}x{} and {}x{}",
                            se.reduce.out_dim(),
                            se.reduce.in_dim(),
                            se.expand.out_dim(),
                            se.expand.in_dim(),
                            g = se.groups
                        )));
                    }
                    d
                }
            };
            dims.push(dim);
        }
        Ok(AnnGraph { nodes, input_dim, output_id, dims, index })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_id(&self) -> NodeId {
        self.output_id
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.index[&self.output_id]]
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn dim_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).map(|&i| self.dims[i])
    }

    pub(crate) fn position(&self, id: NodeId) -> usize {
        self.index[&id]
    }

    /// Gate kinds the graph needs units for.
    pub fn gate_kinds(&self) -> BTreeSet<GateKind> {
        let mut kinds = BTreeSet::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation(a) => kinds.extend(a.gate()),
                Op::Multiply => {
                    kinds.insert(GateKind::Mult);
                }
                Op::SeBlock(se) => {
                    kinds.extend(se.inner_activation.gate());
                    kinds.insert(GateKind::Sigmoid);
                    kinds.insert(GateKind::Mult);
                }
                _ => {}
            }
        }
        kinds
    }

    /// Number of nodes consuming each node's output.
    fn consumer_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut counts: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for node in &self.nodes {
            for p in &node.inputs {
                *counts.get_mut(p).expect("validated reference") += 1;
            }
        }
        counts
    }

    fn next_free_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1)
    }
}

fn find_cycle(nodes: &[Node], index: &BTreeMap<NodeId, usize>) -> Option<NodeId> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks = vec![Mark::New; nodes.len()];
    for start in 0..nodes.len() {
        if marks[start] != Mark::New {
            continue;
        }
        // iterative DFS: (node position, next input to visit)
        let mut stack = vec![(start, 0usize)];
        marks[start] = Mark::Active;
        while let Some(&mut (pos, ref mut next)) = stack.last_mut() {
            if let Some(pred) = nodes[pos].inputs.get(*next) {
                *next += 1;
                let p = index[pred];
                match marks[p] {
                    Mark::Active => return Some(nodes[p].id),
                    Mark::New => {
                        marks[p] = Mark::Active;
                        stack.push((p, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks[pos] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Incremental construction of graphs in code.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    next: NodeId,
}

impl GraphBuilder {
    /// Starts a graph whose input node has id 0.
    pub fn new(input_dim: usize) -> Self {
        GraphBuilder { nodes: vec![Node { id: 0, op: Op::Input { dim: input_dim }, inputs: vec![] }], next: 1 }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let id = self.next;
        self.next += 1;
        self.nodes.push(Node { id, op, inputs });
        id
    }

    pub fn dense(&mut self, from: NodeId, weight: Vec<Vec<f64>>, bias: Vec<f64>) -> NodeId {
        self.push(Op::Dense(DenseLayer::new(weight, bias)), vec![from])
    }

    pub fn activation(&mut self, from: NodeId, kind: ActivationKind) -> NodeId {
        self.push(Op::Activation(kind), vec![from])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn multiply(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Multiply, vec![a, b])
    }

    pub fn avg_pool(&mut self, from: NodeId, groups: usize) -> NodeId {
        self.push(Op::GlobalAvgPool { groups }, vec![from])
    }

    pub fn se_block(&mut self, from: NodeId, se: SeBlock) -> NodeId {
        self.push(Op::SeBlock(se), vec![from])
    }

    pub fn finish(mut self, output_of: NodeId) -> Result<AnnGraph, GraphError> {
        let out = self.push(Op::Output, vec![output_of]);
        AnnGraph::new(self.nodes, out)
    }
}

fn mean_pool(x: &[f64], groups: usize) -> Vec<f64> {
    let size = x.len() / groups;
    x.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect()
}

/// Evaluates `g` on `input`, computing every nonlinear gate with `gate`.
///
/// `gate` receives the gate kind and its one or two operands.
pub fn forward_with<F>(g: &AnnGraph, input: &[f64], mut gate: F) -> Result<Vec<f64>, GraphError>
where
    F: FnMut(GateKind, &[f64]) -> Result<f64, GraphError>,
{
    if input.len() != g.input_dim {
        return Err(GraphError::InputDim { expected: g.input_dim, got: input.len() });
    }
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let arg = |k: usize| &values[g.index[&node.inputs[k]]];
        let out = match &node.op {
            Op::Input { .. } => input.to_vec(),
            Op::Dense(layer) => layer.apply(arg(0)),
            Op::Activation(kind) => activate(&mut gate, *kind, arg(0))?,
            Op::Add => arg(0).iter().zip(arg(1)).map(|(a, b)| a + b).collect(),
            Op::Multiply => multiply(&mut gate, arg(0), arg(1))?,
            Op::GlobalAvgPool { groups } => mean_pool(arg(0), *groups),
            Op::SeBlock(se) => {
                let trunk = arg(0);
                let reduced = se.reduce.apply(&mean_pool(trunk, se.groups));
                let inner = activate(&mut gate, se.inner_activation, &reduced)?;
                let expanded = replicate(&se.expand, trunk.len() / se.groups).apply(&inner);
                let squashed = activate(&mut gate, ActivationKind::Sigmoid, &expanded)?;
                multiply(&mut gate, trunk, &squashed)?
            }
            Op::Output => arg(0).clone(),
        };
        values.push(out);
    }
    Ok(values.swap_remove(g.index[&g.output_id]))
}

fn activate<F>(gate: &mut F, kind: ActivationKind, x: &[f64]) -> Result<Vec<f64>, GraphError>
where
    F: FnMut(GateKind, &[f64]) -> Result<f64, GraphError>,
{
    match kind.gate() {
        None => Ok(x.to_vec()),
        Some(k) => x.iter().map(|v| gate(k, &[*v])).collect(),
    }
}

fn multiply<F>(gate: &mut F, a: &[f64], b: &[f64]) -> Result<Vec<f64>, GraphError>
where
    F: FnMut(GateKind, &[f64]) -> Result<f64, GraphError>,
{
    a.iter().zip(b).map(|(x, y)| gate(GateKind::Mult, &[*x, *y])).collect()
}

/// Exact reference evaluation.
pub fn ann_forward(g: &AnnGraph, input: &[f64]) -> Result<Vec<f64>, GraphError> {
    forward_with(g, input, |kind, args| Ok(reference_activation(kind, args)?))
}

/// Expand weights whose rows are replicated `times` times each, so a
/// per-channel result covers every position of its channel.
fn replicate(layer: &DenseLayer, times: usize) -> DenseLayer {
    let mut weight = Vec::with_capacity(layer.out_dim() * times);
    let mut bias = Vec::with_capacity(layer.out_dim() * times);
    for (row, b) in layer.weight.iter().zip(&layer.bias) {
        for _ in 0..times {
            weight.push(row.clone());
            bias.push(*b);
        }
    }
    DenseLayer { weight, bias }
}

/// Replaces each maximal `Dense -> (identity activation)* -> Dense` chain by a
/// single dense layer. Intermediate nodes must have no other consumer.
pub fn collapse_linear(g: &AnnGraph) -> AnnGraph {
    let mut current = g.clone();
    loop {
        let counts = current.consumer_counts();
        let mut merge = None;
        'search: for (pos, node) in current.nodes.iter().enumerate() {
            let Op::Dense(outer) = &node.op else { continue };
            let mut removed = Vec::new();
            let mut cur = node.inputs[0];
            loop {
                if counts[&cur] != 1 {
                    continue 'search;
                }
                let pred = &current.nodes[current.index[&cur]];
                match &pred.op {
                    Op::Activation(ActivationKind::Identity) => {
                        removed.push(cur);
                        cur = pred.inputs[0];
                    }
                    Op::Dense(inner) => {
                        removed.push(cur);
                        let fused = Node { id: node.id, op: Op::Dense(outer.compose(inner)), inputs: pred.inputs.clone() };
                        merge = Some((pos, fused, removed));
                        break 'search;
                    }
                    _ => continue 'search,
                }
            }
        }
        let Some((pos, fused, removed)) = merge else { return current };
        let mut nodes = current.nodes.clone();
        nodes[pos] = fused;
        nodes.retain(|n| !removed.contains(&n.id));
        current = AnnGraph::new(nodes, current.output_id).expect("collapsing preserves validity");
    }
}

/// Rewrites every SE block into pool, dense, activation and multiply nodes.
/// The final multiply keeps the block's id.
pub fn expand_se_blocks(g: &AnnGraph) -> AnnGraph {
    let mut next = g.next_free_id();
    let mut fresh = || {
        let id = next;
        next += 1;
        id
    };
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let Op::SeBlock(se) = &node.op else {
            nodes.push(node.clone());
            continue;
        };
        let trunk = node.inputs[0];
        let positions = g.dim_of(trunk).expect("validated") / se.groups;
        let pool = fresh();
        nodes.push(Node { id: pool, op: Op::GlobalAvgPool { groups: se.groups }, inputs: vec![trunk] });
        let reduce = fresh();
        nodes.push(Node { id: reduce, op: Op::Dense(se.reduce.clone()), inputs: vec![pool] });
        let mut last = reduce;
        if se.inner_activation != ActivationKind::Identity {
            let act = fresh();
            nodes.push(Node { id: act, op: Op::Activation(se.inner_activation), inputs: vec![last] });
            last = act;
        }
        let expand = fresh();
        nodes.push(Node { id: expand, op: Op::Dense(replicate(&se.expand, positions)), inputs: vec![last] });
        let squash = fresh();
        nodes.push(Node { id: squash, op: Op::Activation(ActivationKind::Sigmoid), inputs: vec![expand] });
        nodes.push(Node { id: node.id, op: Op::Multiply, inputs: vec![trunk, squash] });
    }
    AnnGraph::new(nodes, g.output_id).expect("SE expansion preserves validity")
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Serialize)]
struct NodeRecord<'a> {
    id: NodeId,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<&'a Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<&'a Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reduce: Option<&'a DenseLayer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expand: Option<&'a DenseLayer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_activation: Option<ActivationKind>,
    inputs: &'a [NodeId],
}

#[derive(Serialize)]
struct GraphRecord<'a> {
    input_dim: usize,
    output_id: NodeId,
    nodes: Vec<NodeRecord<'a>>,
}

impl AnnGraph {
    pub fn to_json(&self) -> String {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut r = NodeRecord {
                    id: n.id,
                    kind: n.op.kind_name(),
                    dim: None,
                    activation: None,
                    weight: None,
                    bias: None,
                    groups: None,
                    reduce: None,
                    expand: None,
                    inner_activation: None,
                    inputs: &n.inputs,
                };
                match &n.op {
                    Op::Input { dim } => r.dim = Some(*dim),
                    Op::Dense(layer) => {
                        r.weight = Some(&layer.weight);
                        r.bias = Some(&layer.bias);
                    }
                    Op::Activation(kind) => r.activation = Some(*kind),
                    Op::GlobalAvgPool { groups } => r.groups = Some(*groups),
                    Op::SeBlock(se) => {
                        r.groups = Some(se.groups);
                        r.reduce = Some(&se.reduce);
                        r.expand = Some(&se.expand);
                        r.inner_activation = Some(se.inner_activation);
                    }
                    Op::Add | Op::Multiply | Op::Output => {}
                }
                r
            })
            .collect();
        let record = GraphRecord { input_dim: self.input_dim, output_id: self.output_id, nodes };
        serde_json::to_string_pretty(&record).expect("graph always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| GraphError::Document(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| GraphError::Document("top level must be an object".into()))?;
        let top = |name: &str| obj.get(name).ok_or_else(|| GraphError::Document(format!("missing `{name}`")));
        let input_dim: usize =
            serde_json::from_value(top("input_dim")?.clone()).map_err(|e| GraphError::Document(format!("`input_dim`: {e}")))?;
        let output_id: NodeId =
            serde_json::from_value(top("output_id")?.clone()).map_err(|e| GraphError::Document(format!("`output_id`: {e}")))?;
        let raw_nodes = top("nodes")?.as_array().ok_or_else(|| GraphError::Document("`nodes` must be an array".into()))?;
        let nodes = raw_nodes.iter().enumerate().map(|(i, v)| parse_node(i, v)).collect::<Result<Vec<_>, _>>()?;
        let g = AnnGraph::new(nodes, output_id)?;
        if g.input_dim != input_dim {
            return Err(GraphError::Document(format!(
                "`input_dim` is {input_dim} but the input node has dimension {}",
                g.input_dim
            )));
        }
        Ok(g)
    }
}

fn field<T: DeserializeOwned>(node: usize, obj: &Map<String, Value>, name: &str) -> Result<T, GraphError> {
    let schema = |message: String| GraphError::Schema { node, field: name.to_string(), message };
    let v = obj.get(name).ok_or_else(|| schema("missing".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| schema(e.to_string()))
}

fn parse_node(node: usize, v: &Value) -> Result<Node, GraphError> {
    let obj = v.as_object().ok_or_else(|| GraphError::Schema {
        node,
        field: "<node>".into(),
        message: "node must be an object".into(),
    })?;
    let id: NodeId = field(node, obj, "id")?;
    let kind: String = field(node, obj, "kind")?;
    let inputs: Vec<NodeId> = field(node, obj, "inputs")?;
    let activation = |name: &str| -> Result<ActivationKind, GraphError> {
        let s: String = field(node, obj, name)?;
        s.parse().map_err(|message| GraphError::Schema { node, field: name.into(), message })
    };
    let op = match kind.as_str() {
        "input" => Op::Input { dim: field(node, obj, "dim")? },
        "dense" => Op::Dense(DenseLayer { weight: field(node, obj, "weight")?, bias: field(node, obj, "bias")? }),
        "activation" => Op::Activation(activation("activation")?),
        "add" => Op::Add,
        "multiply" => Op::Multiply,
        "global_avg_pool" => Op::GlobalAvgPool { groups: field(node, obj, "groups")? },
        "se_block" => Op::SeBlock(SeBlock {
            groups: field(node, obj, "groups")?,
            reduce: field(node, obj, "reduce")?,
            expand: field(node, obj, "expand")?,
            inner_activation: if obj.contains_key("inner_activation") {
                activation("inner_activation")?
            } else {
                ActivationKind::Identity
            },
        }),
        "output" => Op::Output,
        other => {
            return Err(GraphError::Schema { node, field: "kind".into(), message: format!("unknown node kind `{other}`") })
        }
    };
    Ok(Node { id, op, inputs })
}
