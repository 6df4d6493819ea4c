//! Experiment configuration, single-trial execution and study orchestration.

pub mod config;
pub mod study;
pub mod trial;

pub use config::{ExperimentConfig, StudyConfig, WorkloadConfig};
pub use study::{run_study, run_study_with, steps_to_result, StudyEntry, StudyOutcome, StudyTable};
pub use trial::{run_trial, trial_key, StudyPoint, TrialRecord, TrialStatus, Workload};
