//! Pipeline glue: synthetic traffic, experiment orchestration, throughput
//! benchmarking and report plots.

pub mod bench;
pub mod experiment;
pub mod plot;
pub mod synth;

pub use bench::{bench_throughput, BenchOptions, BenchRow};
pub use experiment::{
    run_experiment, AnomalyCapture, Balance, DataSource, EpochEval, EvaluateStage, ExperimentReport, ExperimentSpec, Failure,
    LatentDim, OutputSpec, PointSummary, SeedResult, Stage, Sweep, TrainStage,
};
pub use synth::{
    synth_generate, AnomalyProfile, NormalProfile, NormalTemplate, PacketsPerFlow, SynthConfig, SynthCorpus,
    SynthPacket, FLOOD_REPEAT_CLASS, RANDOM_PAYLOAD_CLASS,
};
