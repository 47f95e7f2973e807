//! Experiment plumbing: configuration, synthetic worlds and data, paired benchmarks, reports.

pub mod benchmark;
pub mod config;
pub mod report;
pub mod synth;
pub mod world;

pub use benchmark::{
    aggregate, mean_stderr, read_records, read_timing, run_benchmark, run_benchmark_in, wait_time_overhead,
    write_outputs, write_records, write_timing, AggregateRow, BenchmarkOutput, EpisodeRecord, MetricsReport, Stat,
    TimingRecord,
};
pub use config::{DemandSource, ExperimentConfig, MapSpec, PolicyKind, Surge, WorldConfig};
pub use report::{read_predictions, write_predictions, write_report, PredictionRow};
pub use synth::{generate_data, SynthConfig, SynthData};
pub use world::{generate_scenario, stream_hash, Scenario, World};
