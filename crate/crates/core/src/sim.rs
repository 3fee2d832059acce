//! Clocked simulation of spiking networks.
//!
//! Each step writes the current input (zeros when none is presented), then
//! evaluates taps and gates in topological order against values delayed by
//! their synapses, and finally the readout. Every source keeps a history ring
//! long enough for its longest outgoing delay, so a value emitted at step `s`
//! is visible to a synapse of delay `d` exactly at step `s + d`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::{NetNode, NetworkError, Source, SpikingNetwork, Synapse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("input has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no inputs to run")]
    Empty,
    #[error("state was built for a different network")]
    StateMismatch,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Input `k` is presented at step `k`; outputs overlap in flight.
    Pipelined,
    /// Each input runs alone on a fresh state.
    Single,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pipelined => "pipelined",
            Mode::Single => "single",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipelined" => Ok(Mode::Pipelined),
            "single" => Ok(Mode::Single),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
struct Ring {
    data: Vec<f64>,
}

impl Ring {
    fn new(max_delay: usize) -> Self {
        Ring { data: vec![0.0; max_delay + 1] }
    }

    #[inline]
    fn write(&mut self, t: usize, v: f64) {
        let n = self.data.len();
        self.data[t % n] = v;
    }

    /// Value written at `t - delay`; zero before anything was written.
    #[inline]
    fn read(&self, t: usize, delay: usize) -> f64 {
        let n = self.data.len();
        self.data[(t + n - delay) % n]
    }

    fn clear(&mut self) {
        self.data.fill(0.0);
    }
}

/// Mutable simulation state of one network.
#[derive(Debug, Clone)]
pub struct SimState {
    time: usize,
    order: Vec<NetNode>,
    inputs: Vec<Ring>,
    taps: Vec<Ring>,
    gates: Vec<Ring>,
    readout: Vec<f64>,
    total_spikes: u64,
}

impl SimState {
    pub fn new(net: &SpikingNetwork) -> Result<Self, SimError> {
        let order = net.topological_order()?;
        let (inputs, taps, gates) = net.max_outgoing_delays();
        Ok(SimState {
            time: 0,
            order,
            inputs: inputs.into_iter().map(Ring::new).collect(),
            taps: taps.into_iter().map(Ring::new).collect(),
            gates: gates.into_iter().map(Ring::new).collect(),
            readout: vec![0.0; net.readout.len()],
            total_spikes: 0,
        })
    }

    pub fn reset(&mut self) {
        self.time = 0;
        self.total_spikes = 0;
        self.readout.fill(0.0);
        self.inputs.iter_mut().chain(&mut self.taps).chain(&mut self.gates).for_each(Ring::clear);
    }

    /// Index of the next step to execute.
    pub fn time(&self) -> usize {
        self.time
    }

    /// Readout computed by the last step.
    pub fn readout(&self) -> &[f64] {
        &self.readout
    }

    pub fn total_spikes(&self) -> u64 {
        self.total_spikes
    }

    #[inline]
    fn weighted_sum(&self, synapses: &[Synapse], t: usize) -> f64 {
        let mut acc = 0.0;
        for s in synapses {
            let ring = match s.src {
                Source::Input(i) => &self.inputs[i],
                Source::Tap(i) => &self.taps[i],
                Source::Gate(i) => &self.gates[i],
            };
            acc += s.w * ring.read(t, s.delay);
        }
        acc
    }
}

/// Advances `state` by one step, presenting `input` (or zeros). Returns the
/// gates that fired.
pub fn step(state: &mut SimState, net: &SpikingNetwork, input: Option<&[f64]>) -> Result<Vec<usize>, SimError> {
    if state.inputs.len() != net.input_dim
        || state.taps.len() != net.input_taps.len()
        || state.gates.len() != net.gates.len()
        || state.readout.len() != net.readout.len()
    {
        return Err(SimError::StateMismatch);
    }
    if let Some(x) = input {
        if x.len() != net.input_dim {
            return Err(SimError::Dimension { expected: net.input_dim, got: x.len() });
        }
    }
    let t = state.time;
    for i in 0..net.input_dim {
        let v = input.map_or(0.0, |x| x[i]);
        state.inputs[i].write(t, v);
    }
    let mut fired = Vec::new();
    for k in 0..state.order.len() {
        match state.order[k] {
            NetNode::Tap(i) => {
                let v = state.weighted_sum(&net.input_taps[i].synapses, t);
                state.taps[i].write(t, v);
            }
            NetNode::Gate(i) => {
                let g = &net.gates[i];
                let spike = state.weighted_sum(&g.synapses, t) - g.threshold >= 0.0;
                state.gates[i].write(t, if spike { 1.0 } else { 0.0 });
                if spike {
                    fired.push(i);
                }
            }
        }
    }
    for (i, line) in net.readout.iter().enumerate() {
        state.readout[i] = state.weighted_sum(&line.synapses, t) + line.bias;
    }
    state.total_spikes += fired.len() as u64;
    state.time += 1;
    fired.sort_unstable();
    Ok(fired)
}

/// One spike, with the presentation it belongs to if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub step: usize,
    pub gate: usize,
    pub presentation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: Mode,
    /// `outputs[k]` is the readout for input `k`.
    pub outputs: Vec<Vec<f64>>,
    pub first_output_step: usize,
    /// Index of the last step: `L + N - 1` pipelined, `N · L` single.
    pub steps: usize,
    pub latency: usize,
    pub neuron_count: usize,
    /// Spikes attributed to some presentation.
    pub total_spikes: u64,
    pub spikes_per_inference: Vec<u64>,
    /// Spikes of wavefronts no input was presented for, e.g. gates with a
    /// non-positive threshold firing on the zeros between presentations.
    pub unattributed_spikes: u64,
    pub peak_simultaneous_spikes: usize,
    /// Times a neuron fired twice for the same presentation.
    pub amos_violations: u64,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

/// Per-inference spike statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCounts {
    pub per_inference: Vec<u64>,
    pub total: u64,
    pub mean: f64,
    pub max: u64,
}

pub fn count_spikes(report: &SimReport) -> SpikeCounts {
    let per_inference = report.spikes_per_inference.clone();
    let total = per_inference.iter().sum();
    let mean = if per_inference.is_empty() { 0.0 } else { total as f64 / per_inference.len() as f64 };
    let max = per_inference.iter().copied().max().unwrap_or(0);
    SpikeCounts { per_inference, total, mean, max }
}

pub fn run_stream(net: &SpikingNetwork, inputs: &[Vec<f64>], mode: Mode) -> Result<SimReport, SimError> {
    run(net, inputs, mode, None)
}

/// Like [`run_stream`], also returning every spike.
pub fn run_stream_traced(
    net: &SpikingNetwork,
    inputs: &[Vec<f64>],
    mode: Mode,
) -> Result<(SimReport, Vec<SpikeEvent>), SimError> {
    let mut events = Vec::new();
    let report = run(net, inputs, mode, Some(&mut events))?;
    Ok((report, events))
}

struct Tally {
    offsets: Vec<usize>,
    /// Presentation each gate last fired for, plus one.
    last: Vec<usize>,
    per_inference: Vec<u64>,
    unattributed: u64,
    violations: u64,
    peak: usize,
}

impl Tally {
    fn record(
        &mut self,
        step: usize,
        local_step: usize,
        fired: &[usize],
        presentations: std::ops::Range<usize>,
        events: &mut Option<&mut Vec<SpikeEvent>>,
    ) {
        self.peak = self.peak.max(fired.len());
        for &g in fired {
            let p = local_step
                .checked_sub(self.offsets[g])
                .map(|w| w + presentations.start)
                .filter(|p| presentations.contains(p));
            match p {
                Some(p) => {
                    self.per_inference[p] += 1;
                    if self.last[g] == p + 1 {
                        self.violations += 1;
                    }
                    self.last[g] = p + 1;
                }
                None => self.unattributed += 1,
            }
            if let Some(ev) = events.as_deref_mut() {
                ev.push(SpikeEvent { step, gate: g, presentation: p });
            }
        }
    }
}

fn run(
    net: &SpikingNetwork,
    inputs: &[Vec<f64>],
    mode: Mode,
    mut events: Option<&mut Vec<SpikeEvent>>,
) -> Result<SimReport, SimError> {
    if inputs.is_empty() {
        return Err(SimError::Empty);
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != net.input_dim) {
        return Err(SimError::Dimension { expected: net.input_dim, got: bad.len() });
    }
    let offsets = net.stage_offsets()?;
    let n = inputs.len();
    let l = net.latency;
    let mut tally = Tally {
        offsets: offsets.gates.iter().map(|o| o.unwrap_or(0)).collect(),
        last: vec![0; net.gates.len()],
        per_inference: vec![0; n],
        unattributed: 0,
        violations: 0,
        peak: 0,
    };
    let mut state = SimState::new(net)?;
    let mut outputs = Vec::with_capacity(n);
    let steps = match mode {
        Mode::Pipelined => {
            for t in 0..l + n {
                let fired = step(&mut state, net, inputs.get(t).map(Vec::as_slice))?;
                tally.record(t, t, &fired, 0..n, &mut events);
                if t >= l {
                    outputs.push(state.readout().to_vec());
                }
            }
            l + n - 1
        }
        Mode::Single => {
            for (k, x) in inputs.iter().enumerate() {
                state.reset();
                tally.last.fill(0);
                for t in 0..=l {
                    let input = (t == 0).then_some(x.as_slice());
                    let fired = step(&mut state, net, input)?;
                    tally.record(k * l + t, t, &fired, k..k + 1, &mut events);
                }
                outputs.push(state.readout().to_vec());
            }
            n * l
        }
    };
    Ok(SimReport {
        mode,
        outputs,
        first_output_step: l,
        steps,
        latency: l,
        neuron_count: net.neuron_count(),
        total_spikes: tally.per_inference.iter().sum(),
        spikes_per_inference: tally.per_inference,
        unattributed_spikes: tally.unattributed,
        peak_simultaneous_spikes: tally.peak,
        amos_violations: tally.violations,
    })
}

/// Spike raster as CSV with columns `step,gate`.
pub fn raster_csv(events: &[SpikeEvent]) -> String {
    let mut out = String::from("step,gate\n");
    for e in events {
        out.push_str(&format!("{},{}\n", e.step, e.gate));
    }
    out
}
