//! Simplified swarm optimization over the hyperparameter encoding.
//!
//! Each variable of each solution is replaced by the gBest value, the
//! pBest value, its current value, or a fresh random value, chosen by one
//! uniform draw against the cumulative thresholds `c_g <= c_p <= c_w`.

use std::fmt;
use std::str::FromStr;

use chrono::Utc;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{BranchTags, EvaluationLogEntry, Source};
use crate::evaluation::{CachedEvaluator, EvalContext, EvalError, Evaluator, FitnessRecord};
use crate::space::{baseline_vector, HyperparamVector, SearchSpace, VariableBounds, NUM_VARS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?} (expected SSO1, SSO2 or SSO3)")]
    UnknownPreset(String),
    #[error("thresholds must satisfy 0 <= c_g <= c_p <= c_w <= 1, got ({0}, {1}, {2})")]
    Thresholds(f64, f64, f64),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "SSO1")]
    Sso1,
    #[serde(rename = "SSO2")]
    Sso2,
    #[serde(rename = "SSO3")]
    Sso3,
}

impl Preset {
    /// Cumulative thresholds `(c_g, c_p, c_w)`.
    pub fn thresholds(&self) -> (f64, f64, f64) {
        match self {
            Preset::Sso1 => (0.4, 0.7, 0.9),
            // c_g = c_p: the pBest branch is never taken
            Preset::Sso2 => (0.5, 0.5, 0.8),
            // c_p = c_w: the keep branch is never taken
            Preset::Sso3 => (0.5, 0.7, 0.7),
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SSO1" => Ok(Preset::Sso1),
            "SSO2" => Ok(Preset::Sso2),
            "SSO3" => Ok(Preset::Sso3),
            _ => Err(ConfigError::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Sso1 => "SSO1",
            Preset::Sso2 => "SSO2",
            Preset::Sso3 => "SSO3",
        })
    }
}

pub fn preset(name: &str) -> Result<(f64, f64, f64), ConfigError> {
    Ok(name.parse::<Preset>()?.thresholds())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    LeftToRight,
}

/// How a generation's solutions are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// One solution at a time; a new gBest is visible to the next solution.
    #[default]
    Sequential,
    /// All solutions of a generation update against the gBest fixed at the
    /// start of the generation and are evaluated concurrently.
    FrozenGbest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsoConfig {
    pub c_g: f64,
    pub c_p: f64,
    pub c_w: f64,
    pub n_sol: u32,
    pub n_gen: u32,
    pub n_run: u32,
    pub early_stop: bool,
    pub seed: u64,
    #[serde(default)]
    pub update_order: UpdateOrder,
    #[serde(default)]
    pub mode: EvaluationMode,
}

impl Default for SsoConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Sso1)
    }
}

impl SsoConfig {
    /// Preset thresholds with 30 solutions, 20 generations and 30 runs.
    pub fn from_preset(p: Preset) -> Self {
        let (c_g, c_p, c_w) = p.thresholds();
        Self {
            c_g,
            c_p,
            c_w,
            n_sol: 30,
            n_gen: 20,
            n_run: 30,
            early_stop: false,
            seed: 0,
            update_order: UpdateOrder::LeftToRight,
            mode: EvaluationMode::Sequential,
        }
    }

    pub fn with_thresholds(mut self, c_g: f64, c_p: f64, c_w: f64) -> Self {
        self.c_g = c_g;
        self.c_p = c_p;
        self.c_w = c_w;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (g, p, w) = (self.c_g, self.c_p, self.c_w);
        if !(0.0 <= g && g <= p && p <= w && w <= 1.0) {
            return Err(ConfigError::Thresholds(g, p, w));
        }
        if self.n_sol == 0 {
            return Err(ConfigError::Zero("n_sol"));
        }
        if self.n_gen == 0 {
            return Err(ConfigError::Zero("n_gen"));
        }
        if self.n_run == 0 {
            return Err(ConfigError::Zero("n_run"));
        }
        Ok(())
    }
}

/// Which source a variable's new value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// gBest value.
    G,
    /// pBest value.
    P,
    /// Current value kept.
    X,
    /// Fresh uniform draw.
    R,
}

impl Branch {
    pub fn as_char(&self) -> char {
        match self {
            Branch::G => 'G',
            Branch::P => 'P',
            Branch::X => 'X',
            Branch::R => 'R',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'G' => Some(Branch::G),
            'P' => Some(Branch::P),
            'X' => Some(Branch::X),
            'R' => Some(Branch::R),
            _ => None,
        }
    }
}

/// Maps a uniform draw `rho` in [0, 1) onto a branch.
pub fn select_branch(rho: f64, cfg: &SsoConfig) -> Branch {
    if rho < cfg.c_g {
        Branch::G
    } else if rho < cfg.c_p {
        Branch::P
    } else if rho < cfg.c_w {
        Branch::X
    } else {
        Branch::R
    }
}

/// Updates one variable. Draws `rho` once; the random branch draws one more
/// value from `bounds`. Inherited values are repaired into `bounds`.
pub fn update_variable<R: Rng + ?Sized>(
    rng: &mut R,
    current: i64,
    pbest: i64,
    gbest: i64,
    bounds: &VariableBounds,
    cfg: &SsoConfig,
) -> (i64, Branch) {
    let rho: f64 = rng.gen();
    let branch = select_branch(rho, cfg);
    let value = match branch {
        Branch::G => bounds.repair(gbest),
        Branch::P => bounds.repair(pbest),
        Branch::X => bounds.repair(current),
        Branch::R => bounds.sample(rng),
    };
    (value, branch)
}

/// Updates all 16 variables of a solution left to right. Each bound is
/// derived from the already-updated prefix, so the result is feasible.
pub fn update_solution<R: Rng + ?Sized>(
    rng: &mut R,
    current: &HyperparamVector,
    pbest: &HyperparamVector,
    gbest: &HyperparamVector,
    space: &SearchSpace,
    cfg: &SsoConfig,
) -> (HyperparamVector, BranchTags) {
    let mut values = [0i64; NUM_VARS];
    let mut tags = [Branch::X; NUM_VARS];
    for j in 1..=NUM_VARS {
        let bounds = space
            .bounds_for(j, &values[..j - 1])
            .expect("updated prefixes are always feasible");
        let (v, b) = update_variable(
            rng,
            current.get(j),
            pbest.get(j),
            gbest.get(j),
            &bounds,
            cfg,
        );
        values[j - 1] = v;
        tags[j - 1] = b;
    }
    (HyperparamVector::from_values(values), BranchTags(tags))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub vector: HyperparamVector,
    pub fitness: f64,
}

/// Population state between evaluations.
#[derive(Debug, Clone)]
pub struct SwarmState {
    pub solutions: Vec<Scored>,
    pub pbest: Vec<Scored>,
    /// 0-based index into `pbest`.
    pub gbest: usize,
    pub baseline: Scored,
    pub generation: u32,
}

impl SwarmState {
    pub fn gbest(&self) -> &Scored {
        &self.pbest[self.gbest]
    }

    /// Records the evaluation of slot `i`; strictly better replaces.
    fn accept(&mut self, i: usize, scored: Scored) {
        if scored.fitness > self.pbest[i].fitness {
            self.pbest[i] = scored.clone();
            if self.pbest[i].fitness > self.pbest[self.gbest].fitness {
                self.gbest = i;
            }
        }
        self.solutions[i] = scored;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: u32,
    pub seed: u64,
    pub best: HyperparamVector,
    pub best_fitness: f64,
    pub baseline_fitness: f64,
    /// First generation after which the gBest beat the baseline.
    pub wins_generation: Option<u32>,
    /// gBest fitness after initialization (index 0) and after each generation.
    pub gbest_history: Vec<f64>,
    pub stopped_early: bool,
    pub entries: Vec<EvaluationLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed in run {run}, generation {generation}, solution {index}: {source}")]
pub struct RunFailure {
    pub run: u32,
    pub generation: u32,
    pub index: u32,
    #[source]
    pub source: EvalError,
    /// Evaluations completed before the failure.
    pub entries: Vec<EvaluationLogEntry>,
}

struct RunLog<'a, E: Evaluator> {
    evaluator: &'a CachedEvaluator<E>,
    run: u32,
    seed: u64,
    ordinal: u64,
    entries: Vec<EvaluationLogEntry>,
}

impl<E: Evaluator> RunLog<'_, E> {
    fn next_context(&mut self, generation: u32, index: u32) -> EvalContext {
        let ctx = EvalContext::new(self.run, generation, index, self.seed, self.ordinal);
        self.ordinal += 1;
        ctx
    }

    fn record(
        &mut self,
        ctx: &EvalContext,
        vector: HyperparamVector,
        source: Source,
        tags: Option<BranchTags>,
        result: Result<FitnessRecord, EvalError>,
    ) -> Result<f64, RunFailure> {
        match result {
            Ok(rec) => {
                self.entries.push(EvaluationLogEntry {
                    run: self.run,
                    generation: ctx.generation,
                    index: ctx.index,
                    vector,
                    fitness: rec.fitness,
                    source,
                    branch_tags: tags,
                    eval_time: rec.eval_time,
                    cached: rec.cached,
                    param_count: rec.param_count,
                    timestamp: Utc::now(),
                });
                Ok(rec.fitness)
            }
            Err(source) => Err(RunFailure {
                run: self.run,
                generation: ctx.generation,
                index: ctx.index,
                source,
                entries: std::mem::take(&mut self.entries),
            }),
        }
    }

    fn eval(
        &mut self,
        generation: u32,
        index: u32,
        vector: HyperparamVector,
        source: Source,
        tags: Option<BranchTags>,
    ) -> Result<f64, RunFailure> {
        let ctx = self.next_context(generation, index);
        let result = self.evaluator.evaluate(&vector, &ctx);
        self.record(&ctx, vector, source, tags, result)
    }
}

/// Runs one SSO search.
///
/// The baseline is evaluated first (generation 0, index 0), then `n_sol`
/// random solutions (generation 0, indices 1..=n_sol), then up to `n_gen`
/// update generations. Fitness is memoized per run, so a repeated vector is
/// evaluated once. With `early_stop`, the run ends after the first update
/// generation whose gBest beats the baseline.
pub fn run_sso<E: Evaluator>(
    cfg: &SsoConfig,
    space: &SearchSpace,
    evaluator: E,
    run: u32,
    seed: u64,
) -> Result<RunResult, RunFailure> {
    let evaluator = CachedEvaluator::new(evaluator);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = RunLog {
        evaluator: &evaluator,
        run,
        seed,
        ordinal: 0,
        entries: Vec::new(),
    };

    let lenet = baseline_vector();
    let baseline_fitness = log.eval(0, 0, lenet, Source::Baseline, None)?;

    let mut solutions = Vec::with_capacity(cfg.n_sol as usize);
    for i in 1..=cfg.n_sol {
        let v = space.sample_vector(&mut rng);
        let fitness = log.eval(0, i, v, Source::Init, None)?;
        solutions.push(Scored { vector: v, fitness });
    }
    let mut gbest = 0;
    for (i, s) in solutions.iter().enumerate() {
        if s.fitness > solutions[gbest].fitness {
            gbest = i;
        }
    }
    let mut state = SwarmState {
        pbest: solutions.clone(),
        solutions,
        gbest,
        baseline: Scored {
            vector: lenet,
            fitness: baseline_fitness,
        },
        generation: 0,
    };

    let mut history = vec![state.gbest().fitness];
    let mut wins_generation = (state.gbest().fitness > baseline_fitness).then_some(0);
    let mut stopped_early = false;

    for t in 1..=cfg.n_gen {
        state.generation = t;
        match cfg.mode {
            EvaluationMode::Sequential => {
                sequential_generation(cfg, space, &mut rng, &mut state, &mut log)?
            }
            EvaluationMode::FrozenGbest => {
                frozen_generation(cfg, space, &mut rng, &mut state, &mut log)?
            }
        }
        let best = state.gbest().fitness;
        history.push(best);
        if wins_generation.is_none() && best > baseline_fitness {
            wins_generation = Some(t);
        }
        if cfg.early_stop && best > baseline_fitness {
            stopped_early = true;
            break;
        }
    }

    let best = state.gbest().clone();
    Ok(RunResult {
        run,
        seed,
        best: best.vector,
        best_fitness: best.fitness,
        baseline_fitness,
        wins_generation,
        gbest_history: history,
        stopped_early,
        entries: log.entries,
    })
}

fn sequential_generation<R: Rng, E: Evaluator>(
    cfg: &SsoConfig,
    space: &SearchSpace,
    rng: &mut R,
    state: &mut SwarmState,
    log: &mut RunLog<'_, E>,
) -> Result<(), RunFailure> {
    for i in 0..state.solutions.len() {
        let gbest = state.gbest().vector;
        let (v, tags) = update_solution(
            rng,
            &state.solutions[i].vector,
            &state.pbest[i].vector,
            &gbest,
            space,
            cfg,
        );
        let fitness = log.eval(
            state.generation,
            i as u32 + 1,
            v,
            Source::Update,
            Some(tags),
        )?;
        state.accept(i, Scored { vector: v, fitness });
    }
    Ok(())
}

fn frozen_generation<R: Rng, E: Evaluator>(
    cfg: &SsoConfig,
    space: &SearchSpace,
    rng: &mut R,
    state: &mut SwarmState,
    log: &mut RunLog<'_, E>,
) -> Result<(), RunFailure> {
    let gbest = state.gbest().vector;
    let updates: Vec<(HyperparamVector, BranchTags, EvalContext)> = (0..state.solutions.len())
        .map(|i| {
            let (v, tags) = update_solution(
                rng,
                &state.solutions[i].vector,
                &state.pbest[i].vector,
                &gbest,
                space,
                cfg,
            );
            (v, tags, log.next_context(state.generation, i as u32 + 1))
        })
        .collect();
    let evaluator = log.evaluator;
    let results: Vec<Result<FitnessRecord, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = updates
            .iter()
            .map(|(v, _, ctx)| s.spawn(move || evaluator.evaluate(v, ctx)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluator thread panicked"))
            .collect()
    });
    for (i, ((v, tags, ctx), result)) in updates.into_iter().zip(results).enumerate() {
        let fitness = log.record(&ctx, v, Source::Update, Some(tags), result)?;
        state.accept(i, Scored { vector: v, fitness });
    }
    Ok(())
}
