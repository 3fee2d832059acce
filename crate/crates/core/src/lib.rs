//! At-most-one-spike (AMOS) spiking subcircuits and the machinery around
//! them: training units to approximate ANN gates, lowering layered ANNs to
//! clocked threshold-gate networks with fixed synaptic delays, and
//! simulating those networks in pipelined mode.

pub mod compile;
pub mod graph;
pub mod sim;
pub mod train;
pub mod unit;
pub mod verify;

pub use compile::{
    amos_forward, compile_graph, compile_unit, distinct_delays, CompileError, ConversionReport, Fanin, Gate,
    LayerReport, NetworkError, ReadoutLine, Source, SpikingNetwork, StageOffsets, Synapse, Tap, UnitLibrary,
};
pub use graph::{
    ann_forward, collapse_linear, expand_se_blocks, forward_with, ActivationKind, AnnGraph, DenseLayer, GraphBuilder,
    GraphError, Node, NodeId, Op, SeBlock,
};
pub use sim::{count_spikes, raster_csv, run_stream, run_stream_traced, step, Mode, SimError, SimReport, SimState, SpikeCounts, SpikeEvent};
pub use train::{
    eval_mse, pseudo_derivative, sample_dataset, train_unit, unit_forward_backward, InitScheme, Sample, TargetFunction,
    TargetKind, TrainConfig, TrainError, TrainReport,
};
pub use unit::{
    build_relu_unit, evaluate_unit, heaviside, parameter_count, reference_activation, AmosUnitParams, GateKind,
    UnitError, UnitEvaluation,
};
pub use verify::{argmax, verify_equivalence, EquivalenceReport, VerifyError};
