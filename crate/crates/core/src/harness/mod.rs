//! Experiment configuration, data, metrics and the trial loop.

pub mod config;
pub mod data;
pub mod metrics;
pub mod run;

pub use config::{
    AheadSection, AttackKind, AttackSpec, DataKind, DatasetSpec, DefenseSpec, ExperimentConfig, HdgSection,
    Protocol, QuerySpec,
};
pub use data::{gen_queries, gen_synthetic, load_csv, true_frequency};
pub use metrics::{efficiency, prism_outcome_prob, prism_violation_bruteforce, prism_violation_ratio};
pub use run::{
    oue_mga_trial, read_results, run_experiment, summarize, write_outputs, write_summaries, AttackDiagnostics,
    Detection, ExperimentOutput, Summary, Timing, TrialResult,
};
