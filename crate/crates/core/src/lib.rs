//! Hyperparameter search for a LeNet-style CNN with simplified swarm
//! optimization (SSO).
//!
//! A configuration is a vector of 16 integers (kernel counts, kernel sizes,
//! strides and pooling windows of two conv/pool stages, the width of the
//! dense layer, and the batch size). Bounds on most variables depend on the
//! feature-map sizes produced by earlier ones; [`space`] computes them and
//! [`shape`] does the underlying size and parameter arithmetic.
//!
//! [`sso`] runs the swarm against any [`evaluation::Evaluator`], either one
//! of the deterministic surrogates or an external trainer process speaking
//! the line-delimited JSON protocol in [`evaluation::protocol`].
//! [`experiment`] repeats runs and [`archive`] persists and summarizes them.

pub mod api;
pub mod archive;
pub mod evaluation;
pub mod experiment;
pub mod report;
pub mod shape;
pub mod space;
pub mod sso;

pub use archive::{
    aspect_table, summarize, AspectTable, EvaluationLogEntry, RunArchive, RunRecord, Source,
    Summary,
};
pub use evaluation::{accuracy, Dataset, EvalError, Evaluator, FitnessRecord, TrainSpec};
pub use experiment::{
    run_experiment, run_experiment_with, EvaluatorSpec, ExperimentError, ExperimentPlan,
};
pub use shape::{
    classify_aspect, layer_output_size, parameter_count, propagate_shapes, Aspect, ImageShape,
    ShapeError, ShapeTrace,
};
pub use space::{
    baseline_vector, bounds_for, repair, sample_vector, validate, HyperparamVector, SearchSpace,
};
pub use sso::{
    preset, run_sso, update_solution, update_variable, Branch, Preset, RunResult, SsoConfig,
};
