//! Request and response bodies of the HTTP service, and the synchronous
//! handlers behind each endpoint.
//!
//! | endpoint            | request            | response            |
//! |---------------------|--------------------|---------------------|
//! | `POST /v1/shapes`   | [`ShapesRequest`]  | [`ShapesResponse`]  |
//! | `POST /v1/params`   | [`ShapesRequest`]  | [`ParamsResponse`]  |
//! | `POST /v1/validate` | [`ShapesRequest`]  | [`ValidateResponse`]|
//! | `POST /v1/optimize` | [`OptimizeRequest`]| [`OptimizeResponse`]|
//! | `POST /v1/report`   | [`ReportRequest`]  | [`ReportResponse`]  |
//!
//! Failures are returned as [`ApiError`] bodies.

use serde::{Deserialize, Serialize};

use crate::archive::{aspect_table, ArchiveError, AspectTable, RunArchive, RunRecord, Summary};
use crate::evaluation::{Dataset, FitnessSplit, TrainSpec};
use crate::experiment::{run_experiment_with, EvaluatorSpec, ExperimentError, ExperimentPlan};
use crate::report;
use crate::shape::{
    propagate_shapes_with_classes, Aspect, ImageShape, ShapeTrace, DEFAULT_NUM_CLASSES,
};
use crate::space::{HyperparamVector, SearchSpace, Violation};
use crate::sso::{EvaluationMode, Preset, SsoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Unparseable or inconsistent input.
    Usage,
    /// The vector does not describe a feasible network.
    Infeasible,
    /// The fitness evaluator failed.
    EvaluatorFailure,
    Internal,
}

impl ErrorCode {
    pub fn exit_code(&self) -> i32 {
        match self {
            ErrorCode::Usage => 2,
            ErrorCode::Infeasible => 3,
            ErrorCode::EvaluatorFailure => 4,
            ErrorCode::Internal => 1,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ErrorCode::Usage => 400,
            ErrorCode::Infeasible => 422,
            ErrorCode::EvaluatorFailure => 502,
            ErrorCode::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    /// Archive (JSON Lines) of the evaluations completed before an
    /// evaluator failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_archive: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            partial_archive: None,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Usage, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapesRequest {
    /// Dash-separated text form.
    pub vector: String,
    /// `WxHxC`, e.g. `28x28x1`.
    pub input: String,
    #[serde(default)]
    pub num_classes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAspect {
    pub layer: String,
    pub shape: ImageShape,
    pub aspect: Aspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapesResponse {
    pub vector: HyperparamVector,
    pub trace: ShapeTrace,
    pub stages: Vec<StageAspect>,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsResponse {
    pub vector: HyperparamVector,
    pub input: ImageShape,
    pub num_classes: u64,
    pub param_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// One human-readable line per violation.
    pub messages: Vec<String>,
}

fn parse_inputs(req: &ShapesRequest) -> Result<(HyperparamVector, ImageShape, u64), ApiError> {
    let vector: HyperparamVector = req
        .vector
        .parse()
        .map_err(|e| ApiError::usage(format!("{e}")))?;
    let input: ImageShape = req
        .input
        .parse()
        .map_err(|e| ApiError::usage(format!("{e}")))?;
    let num_classes = req.num_classes.unwrap_or(DEFAULT_NUM_CLASSES);
    if num_classes == 0 {
        return Err(ApiError::usage("num_classes must be at least 1"));
    }
    Ok((vector, input, num_classes))
}

/// Rejects vectors that break a bound or produce an empty feature map,
/// naming the first offending variable or layer.
fn require_feasible(vector: &HyperparamVector, input: &ImageShape) -> Result<(), ApiError> {
    let violations = SearchSpace::new(*input).validate(vector);
    match violations.first() {
        None => Ok(()),
        Some(first) => Err(ApiError::new(
            ErrorCode::Infeasible,
            format!("infeasible vector {vector} on {input}: {first}"),
        )),
    }
}

pub fn shapes(req: &ShapesRequest) -> Result<ShapesResponse, ApiError> {
    let (vector, input, num_classes) = parse_inputs(req)?;
    require_feasible(&vector, &input)?;
    let trace = propagate_shapes_with_classes(&vector, &input, num_classes)
        .map_err(|e| ApiError::new(ErrorCode::Infeasible, e.to_string()))?;
    let stages = trace
        .stages()
        .iter()
        .map(|(name, shape)| StageAspect {
            layer: name.to_string(),
            shape: *shape,
            aspect: shape.aspect(),
        })
        .collect();
    Ok(ShapesResponse {
        vector,
        rendered: report::render_trace(&trace),
        trace,
        stages,
    })
}

pub fn params(req: &ShapesRequest) -> Result<ParamsResponse, ApiError> {
    let (vector, input, num_classes) = parse_inputs(req)?;
    require_feasible(&vector, &input)?;
    let trace = propagate_shapes_with_classes(&vector, &input, num_classes)
        .map_err(|e| ApiError::new(ErrorCode::Infeasible, e.to_string()))?;
    Ok(ParamsResponse {
        vector,
        input,
        num_classes,
        param_count: trace.param_count,
    })
}

pub fn validate(req: &ShapesRequest) -> Result<ValidateResponse, ApiError> {
    let (vector, input, _) = parse_inputs(req)?;
    let violations = SearchSpace::new(input).validate(&vector);
    Ok(ValidateResponse {
        ok: violations.is_empty(),
        messages: violations.iter().map(|v| v.to_string()).collect(),
        violations,
    })
}

fn default_gens() -> u32 {
    20
}
fn default_sols() -> u32 {
    30
}
fn default_runs() -> u32 {
    30
}
fn default_epochs() -> u32 {
    10
}
fn default_parallel() -> usize {
    1
}

/// Optimizer run request. Defaults mirror the reference protocol:
/// SSO1 thresholds, 30 runs of 20 generations with 30 solutions, 10 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRequest {
    pub dataset: Dataset,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Explicit thresholds; all three or none, exclusive with `preset`.
    #[serde(default)]
    pub thresholds: Option<(f64, f64, f64)>,
    #[serde(default = "default_gens")]
    pub gens: u32,
    #[serde(default = "default_sols")]
    pub sols: u32,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub early_stop: bool,
    pub evaluator: EvaluatorSpec,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default)]
    pub train_subset: Option<u64>,
    #[serde(default)]
    pub test_subset: Option<u64>,
    #[serde(default = "default_parallel")]
    pub parallel_runs: usize,
    #[serde(default)]
    pub frozen_gbest: bool,
    #[serde(default)]
    pub validation_split: bool,
    #[serde(default)]
    pub num_classes: Option<u64>,
}

impl OptimizeRequest {
    pub fn new(dataset: Dataset, evaluator: EvaluatorSpec) -> Self {
        Self {
            dataset,
            preset: None,
            thresholds: None,
            gens: default_gens(),
            sols: default_sols(),
            runs: default_runs(),
            seed: 0,
            early_stop: false,
            evaluator,
            epochs: default_epochs(),
            train_subset: None,
            test_subset: None,
            parallel_runs: 1,
            frozen_gbest: false,
            validation_split: false,
            num_classes: None,
        }
    }

    pub fn plan(&self) -> Result<ExperimentPlan, ApiError> {
        let mut config = SsoConfig::from_preset(self.preset.unwrap_or(Preset::Sso1));
        match (self.preset, self.thresholds) {
            (Some(_), Some(_)) => {
                return Err(ApiError::usage(
                    "give either a preset or explicit thresholds, not both",
                ))
            }
            (_, Some((g, p, w))) => config = config.with_thresholds(g, p, w),
            _ => {}
        }
        config.n_gen = self.gens;
        config.n_sol = self.sols;
        config.n_run = self.runs;
        config.seed = self.seed;
        config.early_stop = self.early_stop;
        if self.frozen_gbest {
            config.mode = EvaluationMode::FrozenGbest;
        }
        config
            .validate()
            .map_err(|e| ApiError::usage(e.to_string()))?;
        if self.epochs == 0 && matches!(self.evaluator, EvaluatorSpec::External { .. }) {
            tracing::warn!("training for zero epochs");
        }
        let mut train = TrainSpec::new(self.dataset);
        train.epochs = self.epochs;
        train.train_subset = self.train_subset;
        train.test_subset = self.test_subset;
        if self.validation_split {
            train.fitness_split = FitnessSplit::Validation;
        }
        if let EvaluatorSpec::External { command, .. } = &self.evaluator {
            if command.trim().is_empty() {
                return Err(ApiError::usage(
                    "the external evaluator needs a trainer command",
                ));
            }
        }
        let mut plan = ExperimentPlan::new(config, train);
        if let Some(n) = self.num_classes {
            if n == 0 {
                return Err(ApiError::usage("num_classes must be at least 1"));
            }
            plan.num_classes = n;
        }
        plan.parallel_runs = self.parallel_runs.max(1);
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub archive_jsonl: String,
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
    pub runs_csv: String,
    pub summary_csv: String,
}

fn csv_text(
    write: impl FnOnce(&mut Vec<u8>) -> Result<(), ArchiveError>,
) -> Result<String, ApiError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    Ok(String::from_utf8(buf).expect("CSV of UTF-8 fields"))
}

pub fn optimize(req: &OptimizeRequest) -> Result<OptimizeResponse, ApiError> {
    let plan = req.plan()?;
    let archive = run_experiment_with(&plan, &req.evaluator).map_err(|e| match &e {
        ExperimentError::Config(c) => ApiError::usage(c.to_string()),
        _ => ApiError {
            code: ErrorCode::EvaluatorFailure,
            message: e.to_string(),
            partial_archive: e.partial_archive().map(RunArchive::to_jsonl),
        },
    })?;
    let summary = archive
        .summary()
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    Ok(OptimizeResponse {
        runs: archive.run_records(),
        runs_csv: csv_text(|w| archive.write_runs_csv(w))?,
        summary_csv: csv_text(|w| archive.write_summary_csv(w))?,
        archive_jsonl: archive.to_jsonl(),
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub archive_jsonl: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
    pub aspect_table: AspectTable,
    pub rendered: String,
}

pub fn report(req: &ReportRequest) -> Result<ReportResponse, ApiError> {
    let archive =
        RunArchive::from_jsonl(&req.archive_jsonl).map_err(|e| ApiError::usage(e.to_string()))?;
    let summary = archive
        .summary()
        .map_err(|e| ApiError::usage(e.to_string()))?;
    let table = aspect_table(&archive, &archive.header.input)
        .map_err(|e| ApiError::usage(e.to_string()))?;
    let runs = archive.run_records();
    let rendered = format!(
        "{}\n{}\nFeature-map aspect counts over per-run bests (input {}):\n{}",
        report::render_summary(&summary),
        report::render_runs(&runs),
        archive.header.input,
        report::render_aspect_table(&table)
    );
    Ok(ReportResponse {
        summary,
        runs,
        aspect_table: table,
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(vector: &str, input: &str) -> ShapesRequest {
        ShapesRequest {
            vector: vector.into(),
            input: input.into(),
            num_classes: None,
        }
    }

    #[test]
    fn shapes_of_cifar_best() {
        let r = shapes(&req("64-6-6-1-1-2-5-64-2-3-1-1-1-1-125-14", "32x32x3")).unwrap();
        assert_eq!(r.trace.param_count, 321_001);
        assert!(r.rendered.contains("params   321001"));
        assert_eq!(r.stages.len(), 5);
    }

    #[test]
    fn error_codes() {
        let e = shapes(&req("32-12-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "28x28x1")).unwrap_err();
        assert_eq!(e.code, ErrorCode::Infeasible);
        assert!(e.message.contains("x2 = 12"));
        assert_eq!(e.code.exit_code(), 3);
        let e = shapes(&req("32-5-5", "28x28x1")).unwrap_err();
        assert_eq!(e.code, ErrorCode::Usage);
        let e = params(&req("32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "28x28")).unwrap_err();
        assert_eq!(e.code.exit_code(), 2);
    }

    #[test]
    fn validate_reports_violations() {
        let r = validate(&req("32-12-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "28x28x1")).unwrap();
        assert!(!r.ok);
        assert_eq!(r.messages[0], "x2 = 12 is outside [2, 11]");
        assert!(
            validate(&req("32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10", "28x28x1"))
                .unwrap()
                .ok
        );
    }

    #[test]
    fn optimize_request_defaults() {
        let r: OptimizeRequest = serde_json::from_str(
            r#"{"dataset":"mnist","evaluator":{"kind":"param_target","target":null}}"#,
        )
        .unwrap();
        let plan = r.plan().unwrap();
        assert_eq!(
            (plan.config.n_gen, plan.config.n_sol, plan.config.n_run),
            (20, 30, 30)
        );
        assert_eq!(
            (plan.config.c_g, plan.config.c_p, plan.config.c_w),
            (0.4, 0.7, 0.9)
        );
        assert_eq!(plan.train.epochs, 10);
    }

    #[test]
    fn conflicting_threshold_sources() {
        let mut r = OptimizeRequest::new(Dataset::Mnist, EvaluatorSpec::Separable { target: None });
        r.preset = Some(Preset::Sso2);
        r.thresholds = Some((0.1, 0.2, 0.3));
        assert_eq!(r.plan().unwrap_err().code, ErrorCode::Usage);
        r.preset = None;
        r.thresholds = Some((0.3, 0.2, 0.1));
        assert_eq!(r.plan().unwrap_err().code, ErrorCode::Usage);
    }

    #[test]
    fn optimize_then_report() {
        let mut r =
            OptimizeRequest::new(Dataset::Mnist, EvaluatorSpec::ParamTarget { target: None });
        r.runs = 2;
        r.gens = 3;
        r.sols = 4;
        let out = optimize(&r).unwrap();
        assert_eq!(out.runs.len(), 2);
        let rep = report(&ReportRequest {
            archive_jsonl: out.archive_jsonl.clone(),
        })
        .unwrap();
        assert_eq!(rep.summary, out.summary);
        assert_eq!(rep.aspect_table.column_sums(), [2; 5]);
    }

    #[test]
    fn report_rejects_empty_archive() {
        let e = report(&ReportRequest {
            archive_jsonl: String::new(),
        })
        .unwrap_err();
        assert_eq!(e.code, ErrorCode::Usage);
    }
}
