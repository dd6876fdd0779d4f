//! Configuration-driven experiment runner behind the `codemi` binary.

pub mod config;
pub mod run;

pub use config::{AttackKind, ExperimentConfig};
pub use run::{
    load_corpora, make_splits, prepare_target, run_experiment, run_sweep, Corpora, ExperimentOutcome, SweepAxis,
};
