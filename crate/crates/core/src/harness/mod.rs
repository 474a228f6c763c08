//! Experiment driver: grids of method × m × run with separately timed
//! hyperparameter learning, training and testing phases.

mod compare;
mod config;
mod report;
mod run;
mod trace;

pub use compare::{compare_fixed_vs_learned, paired_deltas, write_deltas_csv, PairedDelta, PairedReport};
pub use config::{
    DatasetRef, ExperimentConfig, HyperparameterMode, Method, MethodSpec, Partitioner, TraceConfig, SCHEMA_VERSION,
};
pub use report::{
    curves, emit_results, median, write_curves_csv, write_results_csv, CellResult, CellStatus, CurvePoint,
    ExperimentReport, OutputFormat, CURVES_HEADER, RESULTS_HEADER,
};
pub use run::{enumerate_cells, fixed_hyperparameters, merge_shards, run_experiment, run_on_dataset, CellKey, Shard};
pub use trace::{emit_trace, run_trace, SodReference, TraceReport};
