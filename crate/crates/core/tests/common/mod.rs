//! Oracles and generators shared by the integration tests. Nothing here
//! calls into the code paths it is used to check.

#![allow(dead_code)]

use amos_core::graph::{ActivationKind, AnnGraph, DenseLayer, GraphBuilder, NodeId, Op, SeBlock};
use amos_core::{expand_se_blocks, run_stream, AmosUnitParams, GateKind, Mode, SimReport, SpikingNetwork, UnitLibrary};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// `|a - b| <= tol · max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

pub fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

// ---------------------------------------------------------------------------
// Units

/// Unit output written straight from the definition: neurons in order,
/// `z_i = [c_i x + c2_i x2 - Σ_{j<i} h_ij z_j - T_i >= 0]`, `y = Σ d_i z_i`.
pub fn naive_unit(p: &AmosUnitParams, x: f64, x2: f64) -> (f64, Vec<u8>) {
    let mut z: Vec<u8> = Vec::new();
    let mut row = 0;
    for i in 0..p.k {
        let mut v = p.c[i] * x;
        if let Some(c2) = &p.c2 {
            v += c2[i] * x2;
        }
        let mut inhibition = 0.0;
        for (j, zj) in z.iter().enumerate() {
            inhibition += p.h[row + j] * f64::from(*zj);
        }
        row += i;
        v = v - inhibition - p.t[i];
        z.push(u8::from(v >= 0.0));
    }
    let y = z.iter().zip(&p.d).filter(|(zi, _)| **zi == 1).map(|(_, d)| d).sum();
    (y, z)
}

/// Floor of `clamp(x, 0, alpha)` to the grid `alpha 2^-k`.
pub fn quantized_relu(x: f64, k: usize, alpha: f64) -> f64 {
    let step = alpha / 2f64.powi(k as i32);
    let c = x.clamp(0.0, alpha);
    ((c / step).floor() * step).min(alpha - step)
}

pub fn random_unit(rng: &mut ChaCha8Rng, arity: usize, k: usize) -> AmosUnitParams {
    let mut p = AmosUnitParams::zeros(arity, k);
    for i in 0..k {
        p.c[i] = rng.gen_range(0.3..1.5) * if rng.gen_bool(0.2) { -1.0 } else { 1.0 };
        p.t[i] = rng.gen_range(-1.0..1.0);
        p.d[i] = rng.gen_range(-1.0..1.0);
    }
    if let Some(c2) = &mut p.c2 {
        for v in c2.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    for v in p.h.iter_mut() {
        *v = rng.gen_range(-0.5..1.0);
    }
    p
}

/// Triangle CDF: the antiderivative of the unit-area triangle of half width
/// `gamma`, zero on the left.
fn triangle_cdf(v: f64, gamma: f64) -> f64 {
    if v <= -gamma {
        0.0
    } else if v <= 0.0 {
        (v + gamma).powi(2) / (2.0 * gamma * gamma)
    } else if v < gamma {
        1.0 - (gamma - v).powi(2) / (2.0 * gamma * gamma)
    } else {
        1.0
    }
}

/// Flat parameter order used by the gradient oracle: c, c2, d, h, T.
pub fn flat(p: &AmosUnitParams) -> Vec<f64> {
    let mut out = p.c.clone();
    out.extend(p.c2.iter().flatten());
    out.extend(&p.d);
    out.extend(&p.h);
    out.extend(&p.t);
    out
}

fn unflat(shape: &AmosUnitParams, v: &[f64]) -> AmosUnitParams {
    let mut p = shape.clone();
    let k = p.k;
    let mut at = 0;
    let mut take = |n: usize| {
        let s = v[at..at + n].to_vec();
        at += n;
        s
    };
    p.c = take(k);
    if p.c2.is_some() {
        p.c2 = Some(take(k));
    }
    p.d = take(k);
    p.h = take(k * (k - 1) / 2);
    p.t = take(k);
    p
}

fn net_inputs(p: &AmosUnitParams, x: f64, x2: f64, z: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.k);
    let mut row = 0;
    for i in 0..p.k {
        let mut s = p.c[i] * x + p.c2.as_ref().map_or(0.0, |c2| c2[i] * x2) - p.t[i];
        for j in 0..i {
            s -= p.h[row + j] * z[j];
        }
        row += i;
        v.push(s);
    }
    v
}

/// Relaxed forward pass whose exact derivative is the surrogate gradient:
/// `z_i = step(v̄_i) + S(v_i) - S(v̄_i)`, where `v̄` is the net input at the
/// base parameters and `S` the triangle CDF. At the base point it coincides
/// with the hard forward pass.
fn relaxed_loss(p: &AmosUnitParams, base_v: &[f64], x: f64, x2: f64, target: f64, gamma: f64) -> f64 {
    let mut z = vec![0.0; p.k];
    let mut row = 0;
    for i in 0..p.k {
        let mut v = p.c[i] * x + p.c2.as_ref().map_or(0.0, |c2| c2[i] * x2) - p.t[i];
        for j in 0..i {
            v -= p.h[row + j] * z[j];
        }
        row += i;
        let hard = if base_v[i] >= 0.0 { 1.0 } else { 0.0 };
        z[i] = hard + triangle_cdf(v, gamma) - triangle_cdf(base_v[i], gamma);
    }
    let y: f64 = z.iter().zip(&p.d).map(|(zi, di)| zi * di).sum();
    (y - target).powi(2)
}

/// Central finite differences of the relaxed loss, in [`flat`] order.
pub fn fd_gradient(p: &AmosUnitParams, x: f64, x2: f64, target: f64, gamma: f64, eps: f64) -> Vec<f64> {
    let mut z = vec![0.0; p.k];
    let mut base_v = vec![0.0; p.k];
    // hard forward to pin v̄
    for i in 0..p.k {
        let v = net_inputs(p, x, x2, &z)[i];
        base_v[i] = v;
        z[i] = if v >= 0.0 { 1.0 } else { 0.0 };
    }
    let theta = flat(p);
    (0..theta.len())
        .map(|n| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[n] += eps;
            minus[n] -= eps;
            let lp = relaxed_loss(&unflat(p, &plus), &base_v, x, x2, target, gamma);
            let lm = relaxed_loss(&unflat(p, &minus), &base_v, x, x2, target, gamma);
            (lp - lm) / (2.0 * eps)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Graphs

fn random_dense(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> DenseLayer {
    let s = 1.0 / (inp as f64).sqrt();
    DenseLayer::new(
        (0..out).map(|_| (0..inp).map(|_| rng.gen_range(-s..s) * 1.5).collect()).collect(),
        (0..out).map(|_| rng.gen_range(-0.3..0.3)).collect(),
    )
}

fn random_activation(rng: &mut ChaCha8Rng) -> ActivationKind {
    [ActivationKind::Relu, ActivationKind::Sigmoid, ActivationKind::Swish, ActivationKind::Identity][rng.gen_range(0..4)]
}

/// Random small graph mixing dense layers, every activation, residual adds,
/// elementwise products and SE blocks.
pub fn random_toy_graph(rng: &mut ChaCha8Rng) -> AnnGraph {
    let dim = rng.gen_range(2..=5);
    let mut b = GraphBuilder::new(dim);
    let mut cur = b.input();
    let mut cur_dim = dim;
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..5) {
            0 | 1 => {
                let width = rng.gen_range(2..=5);
                let d = b.push(Op::Dense(random_dense(rng, width, cur_dim)), vec![cur]);
                let kind = random_activation(rng);
                cur = b.activation(d, kind);
                cur_dim = width;
            }
            2 => {
                // residual: skip path has fewer gates than the branch
                let d = b.push(Op::Dense(random_dense(rng, cur_dim, cur_dim)), vec![cur]);
                let a = b.activation(d, ActivationKind::Relu);
                let d2 = b.push(Op::Dense(random_dense(rng, cur_dim, cur_dim)), vec![a]);
                let a2 = b.activation(d2, random_activation(rng));
                cur = b.add(cur, a2);
            }
            3 => {
                let width = rng.gen_range(2..=4);
                let p = b.push(Op::Dense(random_dense(rng, width, cur_dim)), vec![cur]);
                let kind = random_activation(rng);
                let p = b.activation(p, kind);
                let q = b.push(Op::Dense(random_dense(rng, width, cur_dim)), vec![cur]);
                cur = b.multiply(p, q);
                cur_dim = width;
            }
            _ => {
                let divisors: Vec<usize> = (1..=cur_dim).filter(|g| cur_dim % g == 0).collect();
                let groups = divisors[rng.gen_range(0..divisors.len())];
                let r = rng.gen_range(1..=groups);
                let se = SeBlock {
                    groups,
                    reduce: random_dense(rng, r, groups),
                    expand: random_dense(rng, groups, r),
                    inner_activation: if rng.gen_bool(0.5) { ActivationKind::Relu } else { ActivationKind::Identity },
                };
                cur = b.se_block(cur, se);
            }
        }
    }
    let out_dim = rng.gen_range(1..=3);
    let head = b.push(Op::Dense(random_dense(rng, out_dim, cur_dim)), vec![cur]);
    b.finish(head).expect("generator builds valid graphs")
}

/// Random plain ReLU MLP: dense + relu layers then a linear head.
pub fn random_relu_mlp(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], out: usize) -> AnnGraph {
    let mut b = GraphBuilder::new(input);
    let mut cur = b.input();
    let mut cur_dim = input;
    for &w in hidden {
        let d = b.push(Op::Dense(random_dense(rng, w, cur_dim)), vec![cur]);
        cur = b.activation(d, ActivationKind::Relu);
        cur_dim = w;
    }
    let head = b.push(Op::Dense(random_dense(rng, out, cur_dim)), vec![cur]);
    b.finish(head).unwrap()
}

/// Library of random units with `K` drawn from `ks`.
pub fn random_library(rng: &mut ChaCha8Rng, ks: std::ops::RangeInclusive<usize>) -> UnitLibrary {
    let mut lib = UnitLibrary::new();
    for kind in GateKind::ALL {
        let k = rng.gen_range(ks.clone());
        lib.insert(kind, random_unit(rng, kind.arity(), k)).unwrap();
    }
    lib
}

/// Longest path from the input to `id`, weighting each gate node by its
/// unit's `K + 1`. Independent of the compiler's bookkeeping.
pub fn deepest_gate_path(g: &AnnGraph, lib: &UnitLibrary) -> usize {
    let g = expand_se_blocks(g);
    let mut depth: std::collections::BTreeMap<NodeId, usize> = Default::default();
    for node in g.nodes() {
        let before = node.inputs.iter().map(|p| depth[p]).max().unwrap_or(0);
        let own = match &node.op {
            Op::Activation(a) => a.gate().map_or(0, |k| lib.get(k).unwrap().k + 1),
            Op::Multiply => lib.get(GateKind::Mult).unwrap().k + 1,
            _ => 0,
        };
        depth.insert(node.id, before + own);
    }
    depth[&g.output_id()]
}

/// Runs a stream and checks the invariants every simulation must satisfy:
/// step count, output count, the at-most-one-spike property and the spike
/// budget per inference.
pub fn checked_run(net: &SpikingNetwork, inputs: &[Vec<f64>], mode: Mode) -> SimReport {
    let r = run_stream(net, inputs, mode).expect("simulation runs");
    let n = inputs.len();
    let expected_steps = match mode {
        Mode::Pipelined => net.latency + n - 1,
        Mode::Single => n * net.latency,
    };
    assert_eq!(r.steps, expected_steps, "step count");
    assert_eq!(r.first_output_step, net.latency);
    assert_eq!(r.outputs.len(), n);
    assert_eq!(r.amos_violations, 0, "a neuron spiked twice for one presentation");
    assert!(r.spikes_per_inference.iter().all(|&s| s as usize <= net.neuron_count()), "spike budget exceeded");
    r
}

/// Feature rows and integer labels from a CSV whose last column is the label.
pub fn load_labeled_csv(path: &std::path::Path) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut reader = csv::Reader::from_path(path).expect("fixture exists");
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.unwrap();
        let mut row: Vec<f64> = record.iter().map(|v| v.parse().unwrap()).collect();
        labels.push(row.pop().unwrap() as usize);
        xs.push(row);
    }
    (xs, labels)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
