//! Multi-run orchestration.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::archive::{ArchiveHeader, RunArchive};
use crate::evaluation::{
    EvalError, Evaluator, ExternalEvaluator, ExternalOptions, ParamTarget, Separable, TrainSpec,
};
use crate::space::{baseline_vector, HyperparamVector, SearchSpace};
use crate::sso::{run_sso, ConfigError, RunFailure, RunResult, SsoConfig};

/// Which fitness evaluator a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    /// Peaks where the parameter count equals `target` (default: the
    /// baseline's count).
    ParamTarget { target: Option<u64> },
    /// Separable landscape peaking at `target` (default: the baseline).
    Separable { target: Option<HyperparamVector> },
    /// Trainer worker started with a shell command.
    External {
        command: String,
        #[serde(default)]
        timeout_s: Option<f64>,
    },
}

impl EvaluatorSpec {
    pub fn build(&self, plan: &ExperimentPlan) -> Result<Box<dyn Evaluator>, EvalError> {
        let input = plan.space.input;
        Ok(match self {
            EvaluatorSpec::ParamTarget { target } => {
                let target = match target {
                    Some(t) => *t,
                    None => {
                        crate::shape::parameter_count(&baseline_vector(), &input, plan.num_classes)?
                    }
                };
                Box::new(ParamTarget::new(input, plan.num_classes, target.max(1)))
            }
            EvaluatorSpec::Separable { target } => Box::new(Separable::new(
                input,
                plan.num_classes,
                target.unwrap_or_else(baseline_vector),
            )),
            EvaluatorSpec::External { command, timeout_s } => {
                let mut opts = ExternalOptions::new(command.clone(), plan.train.clone());
                opts.num_classes = plan.num_classes;
                if let Some(t) = timeout_s {
                    opts.timeout = Duration::from_secs_f64(*t);
                }
                Box::new(ExternalEvaluator::new(opts))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub config: SsoConfig,
    pub train: TrainSpec,
    pub space: SearchSpace,
    pub num_classes: u64,
    /// Runs executed at once; each gets its own evaluator.
    pub parallel_runs: usize,
}

impl ExperimentPlan {
    pub fn new(config: SsoConfig, train: TrainSpec) -> Self {
        let space = SearchSpace::new(train.dataset.input_shape());
        let num_classes = train.dataset.num_classes();
        Self {
            config,
            train,
            space,
            num_classes,
            parallel_runs: 1,
        }
    }

    /// Seed of run `run` (1-based).
    pub fn run_seed(&self, run: u32) -> u64 {
        self.config.seed.wrapping_add(u64::from(run - 1))
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot create evaluator for run {run}: {source}")]
    Evaluator {
        run: u32,
        #[source]
        source: EvalError,
        archive: Box<RunArchive>,
    },
    #[error("{source}")]
    Run {
        #[source]
        source: Box<RunFailure>,
        archive: Box<RunArchive>,
    },
}

impl ExperimentError {
    /// Entries logged before the failure, if any run started.
    pub fn partial_archive(&self) -> Option<&RunArchive> {
        match self {
            ExperimentError::Config(_) => None,
            ExperimentError::Evaluator { archive, .. } | ExperimentError::Run { archive, .. } => {
                Some(archive)
            }
        }
    }
}

type RunOutcome = Result<RunResult, (u32, Result<RunFailure, EvalError>)>;

/// Executes `n_run` independent searches with seeds `seed, seed+1, ...`,
/// creating one evaluator per run through `factory`, and collects every
/// evaluation into one archive in run order.
pub fn run_experiment<F>(
    plan: &ExperimentPlan,
    evaluator_id: String,
    factory: F,
) -> Result<RunArchive, ExperimentError>
where
    F: Fn(u32) -> Result<Box<dyn Evaluator>, EvalError> + Sync,
{
    plan.config.validate()?;
    let header = ArchiveHeader::new(
        plan.config.clone(),
        plan.train.clone(),
        plan.space.input,
        plan.num_classes,
        evaluator_id,
        plan.space.pins,
    );
    let n_run = plan.config.n_run;
    let execute = |run: u32| -> RunOutcome {
        let evaluator = factory(run).map_err(|e| (run, Err(e)))?;
        let seed = plan.run_seed(run);
        let result =
            run_sso(&plan.config, &plan.space, evaluator, run, seed).map_err(|f| (run, Ok(f)))?;
        info!(
            run,
            best = %result.best,
            fitness = result.best_fitness,
            wins_generation = ?result.wins_generation,
            "run finished"
        );
        Ok(result)
    };

    let workers = plan.parallel_runs.clamp(1, n_run as usize);
    let outcomes: Vec<RunOutcome> = if workers == 1 {
        let mut out = Vec::new();
        for run in 1..=n_run {
            let outcome = execute(run);
            let failed = outcome.is_err();
            out.push(outcome);
            if failed {
                break;
            }
        }
        out
    } else {
        let next = AtomicU32::new(1);
        let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new((0..n_run).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let run = next.fetch_add(1, Ordering::SeqCst);
                    if run > n_run {
                        break;
                    }
                    let outcome = execute(run);
                    slots.lock().unwrap()[(run - 1) as usize] = Some(outcome);
                });
            }
        });
        slots.into_inner().unwrap().into_iter().flatten().collect()
    };

    let mut archive = RunArchive::new(header);
    let mut first_failure = None;
    for outcome in outcomes {
        match outcome {
            Ok(result) => archive.entries.extend(result.entries),
            Err((run, failure)) => {
                if let Ok(f) = &failure {
                    archive.entries.extend(f.entries.iter().cloned());
                }
                if first_failure.is_none() {
                    first_failure = Some((run, failure));
                }
            }
        }
    }
    match first_failure {
        None => Ok(archive),
        Some((run, Err(source))) => Err(ExperimentError::Evaluator {
            run,
            source,
            archive: Box::new(archive),
        }),
        Some((_, Ok(failure))) => Err(ExperimentError::Run {
            source: Box::new(failure),
            archive: Box::new(archive),
        }),
    }
}

/// [`run_experiment`] with evaluators built from `spec`.
pub fn run_experiment_with(
    plan: &ExperimentPlan,
    spec: &EvaluatorSpec,
) -> Result<RunArchive, ExperimentError> {
    let id = match spec.build(plan) {
        Ok(ev) => ev.id(),
        Err(source) => {
            return Err(ExperimentError::Evaluator {
                run: 1,
                source,
                archive: Box::new(RunArchive::new(ArchiveHeader::new(
                    plan.config.clone(),
                    plan.train.clone(),
                    plan.space.input,
                    plan.num_classes,
                    format!("{spec:?}"),
                    plan.space.pins,
                ))),
            })
        }
    };
    run_experiment(plan, id, |_| spec.build(plan))
}
