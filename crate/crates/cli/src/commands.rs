use std::collections::BTreeSet;

use amos_core::{
    build_relu_unit, compile_graph, count_spikes, raster_csv, run_stream, run_stream_traced, train_unit as fit_unit,
    verify_equivalence, GateKind, Mode, TargetFunction, TrainConfig, UnitLibrary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{self, CliError, Result};
use crate::{BenchArgs, BuildReluArgs, ConvertArgs, CurveArgs, SimulateArgs, TrainUnitArgs, VerifyArgs};

fn parse_interval(s: &str) -> Result<[f64; 2]> {
    let bad = || CliError::Usage(format!("domain `{s}` is not `lo:hi`"));
    let (lo, hi) = s.split_once(':').or_else(|| s.split_once(',')).ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok([lo, hi])
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("`{s}` is not a comma-separated vector"))))
        .collect()
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

pub fn train_unit(a: TrainUnitArgs) -> Result<()> {
    let kind = GateKind::from(a.kind);
    if a.closed_form {
        if kind != GateKind::Relu {
            return Err(CliError::Usage("--closed-form only exists for relu".into()));
        }
        let k = a.k.unwrap_or(kind.default_k());
        let p = build_relu_unit(k, a.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
        io::save_unit(&a.out, &p)?;
        eprintln!("closed-form relu unit, K={k}, {} parameters", p.parameter_count());
        return Ok(());
    }
    let mut cfg = match &a.config {
        Some(path) => serde_json::from_str::<TrainConfig>(&io::read(path)?).map_err(|e| CliError::data(path.display(), e))?,
        None => TrainConfig::for_gate(kind),
    };
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(seed) = a.seed.seed {
        cfg.rng_seed = seed;
    }
    let target = if a.domain.is_empty() {
        TargetFunction::default_for(kind)
    } else {
        let domain = a.domain.iter().map(|d| parse_interval(d)).collect::<Result<Vec<_>>>()?;
        TargetFunction::gate(kind, domain)?
    };
    let report = fit_unit(&target, &cfg)?;
    io::save_unit(&a.out, &report.params)?;
    if let Some(path) = &a.mse_csv {
        let rows = report.mse_history.iter().enumerate().map(|(e, m)| vec![e as f64, *m]);
        io::write(path, &io::csv_string(&["epoch".into(), "mse".into()], rows)?)?;
    }
    eprintln!(
        "{kind} unit, K={}, {} parameters, grid MSE {:.6}",
        cfg.k,
        report.params.parameter_count(),
        report.final_mse
    );
    Ok(())
}

pub fn build_relu(a: BuildReluArgs) -> Result<()> {
    let p = build_relu_unit(a.k, a.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    io::save_unit(&a.out, &p)?;
    eprintln!("closed-form relu unit, K={}, alpha={}, {} parameters", a.k, a.alpha, p.parameter_count());
    Ok(())
}

pub fn curve(a: CurveArgs) -> Result<()> {
    let p = io::load_unit(&a.params)?;
    let kind = match (p.kind, a.kind) {
        (Some(k), _) => k,
        (None, Some(k)) => k.into(),
        (None, None) => return Err(CliError::Usage("parameters record no kind; pass --kind".into())),
    };
    if kind.arity() != p.arity {
        return Err(CliError::Data(format!("`{kind}` takes {} inputs, unit takes {}", kind.arity(), p.arity)));
    }
    let domain = p.domain.clone().unwrap_or_else(|| TargetFunction::default_for(kind).domain);
    let target = TargetFunction::gate(kind, domain.clone())?;
    let n = a.resolution.unwrap_or(if p.arity == 2 { 101 } else { 1001 });
    if n < 2 {
        return Err(CliError::Usage("--resolution must be at least 2".into()));
    }
    let axis = |[lo, hi]: [f64; 2]| -> Vec<f64> { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() };
    let out = |x: f64, x2: Option<f64>| p.output(x, x2).map_err(|e| CliError::Data(e.to_string()));
    let text = if p.arity == 1 {
        let mut rows = Vec::with_capacity(n);
        for x in axis(domain[0]) {
            rows.push(vec![x, target.value(x, None), out(x, None)?]);
        }
        io::csv_string(&["x".into(), "target".into(), "amos".into()], rows)?
    } else {
        let mut rows = Vec::with_capacity(n * n);
        for x in axis(domain[0]) {
            for y in axis(domain[1]) {
                let (t, v) = (target.value(x, Some(y)), out(x, Some(y))?);
                rows.push(vec![x, y, t, v, (t - v).abs()]);
            }
        }
        io::csv_string(&["x".into(), "y".into(), "target".into(), "amos".into(), "abs_error".into()], rows)?
    };
    io::emit(a.out.as_deref(), &text)
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let g = io::load_graph(&a.graph)?;
    let mut lib = UnitLibrary::new();
    for path in &a.units {
        let p = io::load_unit(path)?;
        lib.insert_tagged(p).map_err(|e| CliError::data(path.display(), e))?;
    }
    let (net, report) = compile_graph(&g, &lib).map_err(|e| CliError::data("conversion", e))?;
    io::save_network(&a.out, &net)?;
    io::emit(a.report.as_deref(), &pretty(&report))
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let g = io::load_graph(&a.graph)?;
    let net = io::load_network(&a.network)?;
    let mut rows = io::read_dataset(&a.dataset, g.input_dim())?;
    if let Some(n) = a.n {
        rows.truncate(n);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} has no samples to verify", a.dataset.display())));
    }
    let mut lib = UnitLibrary::new();
    for path in &a.units {
        lib.insert_tagged(io::load_unit(path)?).map_err(|e| CliError::data(path.display(), e))?;
    }
    let lib = (!a.units.is_empty()).then_some(&lib);
    let report = verify_equivalence(&g, &net, &rows, lib).map_err(|e| CliError::data("verification", e))?;
    io::emit(a.out.as_deref(), &pretty(&report))
}

#[derive(Debug, Serialize)]
struct BenchReport {
    mode: Mode,
    inputs: usize,
    latency: usize,
    first_output_step: usize,
    steps: usize,
    /// Inputs completed per step.
    throughput: f64,
    neuron_count: usize,
    total_spikes: u64,
    mean_spikes_per_inference: f64,
    max_spikes_per_inference: u64,
    unattributed_spikes: u64,
    peak_simultaneous_spikes: usize,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(CliError::Usage("--scale must be positive".into()));
    }
    let net = io::load_network(&a.network)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.seed.unwrap_or(0));
    let inputs: Vec<Vec<f64>> =
        (0..a.n).map(|_| (0..net.input_dim).map(|_| rng.gen_range(-a.scale..=a.scale)).collect()).collect();
    let sim = run_stream(&net, &inputs, a.mode.into()).map_err(|e| CliError::data("simulation", e))?;
    let counts = count_spikes(&sim);
    let report = BenchReport {
        mode: sim.mode,
        inputs: a.n,
        latency: sim.latency,
        first_output_step: sim.first_output_step,
        steps: sim.steps,
        throughput: a.n as f64 / sim.steps.max(1) as f64,
        neuron_count: sim.neuron_count,
        total_spikes: counts.total,
        mean_spikes_per_inference: counts.mean,
        max_spikes_per_inference: counts.max,
        unattributed_spikes: sim.unattributed_spikes,
        peak_simultaneous_spikes: sim.peak_simultaneous_spikes,
    };
    io::emit(a.out.as_deref(), &pretty(&report))
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let net = io::load_network(&a.network)?;
    let inputs = match &a.dataset {
        Some(path) => io::read_dataset(path, net.input_dim)?,
        None => a.input.iter().map(|s| parse_vector(s)).collect::<Result<Vec<_>>>()?,
    };
    if inputs.is_empty() {
        return Err(CliError::Usage("no inputs: pass --dataset or --input".into()));
    }
    let dims: BTreeSet<usize> = inputs.iter().map(Vec::len).collect();
    if dims.iter().any(|&d| d != net.input_dim) {
        return Err(CliError::Data(format!("inputs have dimensions {dims:?}, network expects {}", net.input_dim)));
    }
    let mode: Mode = a.mode.into();
    let (report, events) = if a.raster.is_some() {
        run_stream_traced(&net, &inputs, mode).map_err(|e| CliError::data("simulation", e))?
    } else {
        (run_stream(&net, &inputs, mode).map_err(|e| CliError::data("simulation", e))?, Vec::new())
    };
    if let Some(path) = &a.raster {
        io::write(path, &raster_csv(&events))?;
    }
    if let Some(path) = &a.outputs {
        let header: Vec<String> = (0..net.output_dim()).map(|i| format!("y{i}")).collect();
        io::write(path, &io::csv_string(&header, report.outputs.iter().cloned())?)?;
    }
    io::emit(a.out.as_deref(), &pretty(&report))
}
