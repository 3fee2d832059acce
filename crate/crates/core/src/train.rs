//! Training AMOS units by backpropagation through the Heaviside steps.
//!
//! The forward pass is the exact sequential unit. In the backward pass the
//! derivative of each step is replaced by a triangle of unit area and half
//! width `gamma`; the recurrence through the inhibition terms `H_i` is
//! differentiated exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::unit::{reference_activation, tri_index, AmosUnitParams, GateKind, UnitError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid target: {0}")]
    Target(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Unit(#[from] UnitError),
}

/// What a unit is trained to approximate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TargetKind {
    Gate { gate: GateKind },
    /// Piecewise-linear interpolation through `(xs[i], ys[i])`, constant
    /// beyond the end points.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub kind: TargetKind,
    /// One closed interval per input.
    pub domain: Vec<[f64; 2]>,
}

impl TargetFunction {
    pub fn new(kind: TargetKind, domain: Vec<[f64; 2]>) -> Result<Self, TrainError> {
        let t = TargetFunction { kind, domain };
        t.validate()?;
        Ok(t)
    }

    pub fn gate(gate: GateKind, domain: Vec<[f64; 2]>) -> Result<Self, TrainError> {
        Self::new(TargetKind::Gate { gate }, domain)
    }

    /// The gate on its default training domain.
    pub fn default_for(gate: GateKind) -> Self {
        let domain = match gate {
            GateKind::Relu => vec![[-1.0, 1.0]],
            GateKind::Sigmoid => vec![[-8.0, 8.0]],
            GateKind::Swish => vec![[-6.0, 6.0]],
            GateKind::Mult => vec![[-1.0, 1.0], [-1.0, 1.0]],
        };
        TargetFunction { kind: TargetKind::Gate { gate }, domain }
    }

    pub fn arity(&self) -> usize {
        match &self.kind {
            TargetKind::Gate { gate } => gate.arity(),
            TargetKind::Tabulated { .. } => 1,
        }
    }

    pub fn gate_kind(&self) -> Option<GateKind> {
        match &self.kind {
            TargetKind::Gate { gate } => Some(*gate),
            TargetKind::Tabulated { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.domain.len() != self.arity() {
            return Err(TrainError::Target(format!(
                "domain has {} interval(s), target needs {}",
                self.domain.len(),
                self.arity()
            )));
        }
        for [lo, hi] in &self.domain {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(TrainError::Target("domain bounds must be finite".into()));
            }
            if lo >= hi {
                return Err(TrainError::Target(format!("empty domain [{lo}, {hi}]")));
            }
        }
        if let TargetKind::Tabulated { xs, ys } = &self.kind {
            if xs.is_empty() || xs.len() != ys.len() {
                return Err(TrainError::Target("table needs equally many xs and ys, at least one".into()));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(TrainError::Target("table xs must be strictly increasing".into()));
            }
            if xs.iter().chain(ys).any(|v| !v.is_finite()) {
                return Err(TrainError::Target("table contains non-finite values".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64, x2: Option<f64>) -> f64 {
        match &self.kind {
            TargetKind::Gate { gate } => match x2 {
                Some(x2) => reference_activation(*gate, &[x, x2]),
                None => reference_activation(*gate, &[x]),
            }
            .expect("arity checked at construction"),
            TargetKind::Tabulated { xs, ys } => interpolate(xs, ys, x),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&p| p <= x);
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub x2: Option<f64>,
    pub target: f64,
}

/// `n` points drawn uniformly from the target's domain, paired with exact
/// target values.
pub fn sample_dataset(target: &TargetFunction, n: usize, seed: u64) -> Result<Vec<Sample>, TrainError> {
    target.validate()?;
    if n == 0 {
        return Err(TrainError::Config("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_samples(target, n, &mut rng))
}

fn draw_samples(target: &TargetFunction, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let [lo, hi] = target.domain[0];
            let x = rng.gen_range(lo..=hi);
            let x2 = target.domain.get(1).map(|&[lo, hi]| rng.gen_range(lo..=hi));
            Sample { x, x2, target: target.value(x, x2) }
        })
        .collect()
}

/// Triangle of unit area and half width `gamma` centred at zero.
pub fn pseudo_derivative(v: f64, gamma: f64) -> Result<f64, TrainError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(TrainError::Config(format!("pseudo-derivative width must be positive, got {gamma}")));
    }
    Ok(triangle(v, gamma))
}

#[inline]
fn triangle(v: f64, gamma: f64) -> f64 {
    (1.0 - v.abs() / gamma).max(0.0) / gamma
}

/// Scratch buffers for repeated forward/backward passes on one unit.
#[derive(Debug, Clone)]
struct Workspace {
    z: Vec<bool>,
    v: Vec<f64>,
    gz: Vec<f64>,
}

impl Workspace {
    fn new(k: usize) -> Self {
        Workspace { z: vec![false; k], v: vec![0.0; k], gz: vec![0.0; k] }
    }
}

/// Squared error of one sample; adds `scale * dloss/dparam` into `grad`.
fn accumulate_gradient(
    params: &AmosUnitParams,
    sample: &Sample,
    gamma: f64,
    scale: f64,
    grad: &mut AmosUnitParams,
    ws: &mut Workspace,
) -> f64 {
    let k = params.k;
    let x2 = sample.x2.unwrap_or(0.0);
    let y = params.forward_raw(sample.x, x2, &mut ws.z, Some(&mut ws.v));
    let err = y - sample.target;
    let gy = 2.0 * err * scale;

    // Reverse sweep. gz[j] collects dloss/dz_j from the readout and from the
    // inhibition it exerts on later neurons.
    for i in 0..k {
        ws.gz[i] = gy * params.d[i];
    }
    for i in (0..k).rev() {
        if ws.z[i] {
            grad.d[i] += gy;
        }
        let gv = ws.gz[i] * triangle(ws.v[i], gamma);
        if gv == 0.0 {
            continue;
        }
        grad.c[i] += gv * sample.x;
        if let Some(c2) = grad.c2.as_mut() {
            c2[i] += gv * x2;
        }
        grad.t[i] -= gv;
        for j in 0..i {
            // dv_i/dz_j = -h_ij, dv_i/dh_ij = -z_j
            ws.gz[j] -= gv * params.h[tri_index(i, j)];
            if ws.z[j] {
                grad.h[tri_index(i, j)] -= gv;
            }
        }
    }
    err * err
}

/// Loss `(y - target)^2` of one sample and its surrogate gradient with
/// respect to every parameter, returned in a parameter-shaped container.
pub fn unit_forward_backward(
    params: &AmosUnitParams,
    x: f64,
    x2: Option<f64>,
    target: f64,
    gamma: f64,
) -> Result<(f64, AmosUnitParams), TrainError> {
    params.validate()?;
    pseudo_derivative(0.0, gamma)?;
    let got = 1 + usize::from(x2.is_some());
    if got != params.arity {
        return Err(UnitError::ArityMismatch { expected: params.arity, got }.into());
    }
    if !x.is_finite() || x2.is_some_and(|v| !v.is_finite()) || !target.is_finite() {
        return Err(TrainError::Config("inputs and target must be finite".into()));
    }
    let mut grad = AmosUnitParams::zeros(params.arity, params.k);
    let mut ws = Workspace::new(params.k);
    let loss = accumulate_gradient(params, &Sample { x, x2, target }, gamma, 1.0, &mut grad, &mut ws);
    Ok((loss, grad))
}

/// Flat view of the trainable parameters in the order `c, c2, d, h, T`.
pub fn flatten(p: &AmosUnitParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.parameter_count());
    out.extend_from_slice(&p.c);
    if let Some(c2) = &p.c2 {
        out.extend_from_slice(c2);
    }
    out.extend_from_slice(&p.d);
    out.extend_from_slice(&p.h);
    out.extend_from_slice(&p.t);
    out
}

/// Inverse of [`flatten`]: overwrite the parameters of `p` from `flat`.
pub fn unflatten_into(p: &mut AmosUnitParams, flat: &[f64]) {
    assert_eq!(flat.len(), p.parameter_count(), "flat parameter vector has wrong length");
    let mut rest = flat;
    let mut take = |dst: &mut Vec<f64>| {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    };
    take(&mut p.c);
    if let Some(c2) = p.c2.as_mut() {
        take(c2);
    }
    take(&mut p.d);
    take(&mut p.h);
    take(&mut p.t);
}

/// How a unit's parameters are initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `c ~ U(0.5, 1.5)`, thresholds evenly spread across the domain,
    /// `d ~ U(-r, r)` with `r = output range / K`, `h = 0`.
    Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    /// Fresh samples drawn per epoch.
    pub sample_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Half width of the triangle pseudo-derivative; halved after two
    /// thirds of the epochs.
    pub gamma: f64,
    pub rng_seed: u64,
    pub init_scheme: InitScheme,
    /// Grid resolution per axis for the final MSE.
    pub eval_grid: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 8,
            sample_count: 2048,
            epochs: 300,
            learning_rate: 1e-3,
            batch_size: 32,
            gamma: 1.0,
            rng_seed: 0,
            init_scheme: InitScheme::Spread,
            eval_grid: 1001,
        }
    }
}

impl TrainConfig {
    /// Default configuration for a gate kind at its default unit size.
    pub fn for_gate(gate: GateKind) -> Self {
        let mut cfg = TrainConfig { k: gate.default_k(), ..TrainConfig::default() };
        match gate {
            GateKind::Mult => cfg.eval_grid = 101,
            // gamma = 1 strands neurons on the flat negative branch of [-6, 6]
            GateKind::Swish => {
                cfg.gamma = 3.0;
                cfg.epochs = 1000;
            }
            GateKind::Relu | GateKind::Sigmoid => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [("K", self.k), ("sample_count", self.sample_count), ("epochs", self.epochs), ("batch_size", self.batch_size)];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("`{name}` must be at least 1")));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(TrainError::Config("`gamma` must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("`learning_rate` must be positive".into()));
        }
        if self.eval_grid < 2 {
            return Err(TrainError::Config("`eval_grid` must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: AmosUnitParams,
    /// Mean squared error over each epoch's training samples.
    pub mse_history: Vec<f64>,
    /// MSE on the evenly spaced evaluation grid after training.
    pub final_mse: f64,
}

/// Adam with the usual defaults.
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

fn initialize(target: &TargetFunction, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> AmosUnitParams {
    let k = cfg.k;
    let arity = target.arity();
    let mut p = AmosUnitParams::zeros(arity, k);
    match cfg.init_scheme {
        InitScheme::Spread => {
            let [lo, hi] = target.domain[0];
            let (out_lo, out_hi) = output_range(target);
            let r = ((out_hi - out_lo) / k as f64).max(1e-3);
            for i in 0..k {
                p.c[i] = rng.gen_range(0.5..1.5);
                if let Some(c2) = p.c2.as_mut() {
                    c2[i] = rng.gen_range(0.5..1.5);
                }
                p.t[i] = lo + (i as f64 + 0.5) * (hi - lo) / k as f64;
                p.d[i] = rng.gen_range(-r..r);
            }
        }
    }
    p.kind = target.gate_kind();
    p.domain = Some(target.domain.clone());
    p
}

fn output_range(target: &TargetFunction) -> (f64, f64) {
    let pts = grid(target, 101);
    pts.iter()
        .map(|s| s.target)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Evenly spaced grid over the target's domain, `n` points per axis.
fn grid(target: &TargetFunction, n: usize) -> Vec<Sample> {
    let axis = |[lo, hi]: [f64; 2]| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let xs = axis(target.domain[0]);
    match target.domain.get(1) {
        None => xs.into_iter().map(|x| Sample { x, x2: None, target: target.value(x, None) }).collect(),
        Some(&d2) => {
            let ys = axis(d2);
            xs.iter()
                .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
                .map(|(x, y)| Sample { x, x2: Some(y), target: target.value(x, Some(y)) })
                .collect()
        }
    }
}

/// Mean squared error of the unit against the target on an evenly spaced
/// grid with `grid_points_per_axis` points per input axis.
pub fn eval_mse(params: &AmosUnitParams, target: &TargetFunction, grid_points_per_axis: usize) -> Result<f64, TrainError> {
    target.validate()?;
    params.validate()?;
    if grid_points_per_axis < 2 {
        return Err(TrainError::Config("grid needs at least 2 points per axis".into()));
    }
    if params.arity != target.arity() {
        return Err(UnitError::ArityMismatch { expected: params.arity, got: target.arity() }.into());
    }
    let pts = grid(target, grid_points_per_axis);
    let mut z = vec![false; params.k];
    let sum: f64 = pts
        .iter()
        .map(|s| {
            let y = params.forward_raw(s.x, s.x2.unwrap_or(0.0), &mut z, None);
            (y - s.target).powi(2)
        })
        .sum();
    Ok(sum / pts.len() as f64)
}

/// Minibatch Adam on freshly sampled data each epoch. Deterministic for a
/// fixed `cfg.rng_seed`.
pub fn train_unit(target: &TargetFunction, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    target.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = initialize(target, cfg, &mut rng);
    let mut flat = flatten(&params);
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let mut grad = AmosUnitParams::zeros(params.arity, params.k);
    let mut ws = Workspace::new(params.k);
    let anneal_at = (2 * cfg.epochs) / 3;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let gamma = if epoch >= anneal_at { cfg.gamma * 0.5 } else { cfg.gamma };
        let samples = draw_samples(target, cfg.sample_count, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            zero(&mut grad);
            for s in batch {
                epoch_loss += accumulate_gradient(&params, s, gamma, scale, &mut grad, &mut ws);
            }
            adam.update(&mut flat, &flatten(&grad));
            unflatten_into(&mut params, &flat);
        }
        let mse = epoch_loss / samples.len() as f64;
        if !mse.is_finite() || flat.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch, loss: mse });
        }
        history.push(mse);
    }

    let final_mse = eval_mse(&params, target, cfg.eval_grid)?;
    Ok(TrainReport { params, mse_history: history, final_mse })
}

fn zero(p: &mut AmosUnitParams) {
    for v in [&mut p.c, &mut p.d, &mut p.h, &mut p.t] {
        v.fill(0.0);
    }
    if let Some(c2) = p.c2.as_mut() {
        c2.fill(0.0);
    }
}
