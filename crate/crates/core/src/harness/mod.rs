//! Benchmark harness: JSON-configured commands for prior sampling, single
//! solves, evidence grid search, and phase-transition sweeps.

pub mod commands;
pub mod config;
pub mod synth;

pub use commands::{
    cmd_gridsearch, cmd_phase_transition, cmd_sample, cmd_solve, SamplePaths, SolvePaths,
    SweepResult, SweepRow,
};
pub use config::{
    load_config, EpJson, GridSearchConfig, MethodJson, PhaseTransitionConfig, PriorJson,
    PriorVariant, SampleConfig, SlabJson, SolveConfig,
};
pub use synth::derive_seed;
