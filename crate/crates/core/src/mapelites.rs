//! The MAP-Elites loop: random initialization, then repeated
//! select -> iso-line -> evaluate -> add until the evaluation budget is spent.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, Candidate, GridTessellation};
use crate::metrics::MetricsRecord;
use crate::parallel::Executor;
use crate::rng::RngState;
use crate::tasks::{evaluate_batch, Evaluation, ScoringFunction, TaskError, TaskSpec};
use crate::variation::{iso_line, select_parents, IsoLineParams, VariationError};

/// Initialization is retried this many extra times if no candidate survives.
pub const INIT_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("initialization produced no live candidates after {attempts} attempts")]
    InitFailed { attempts: usize },
    #[error("iteration {iteration}: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: StepError,
    },
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub grid_shape: Vec<usize>,
    pub batch_size: usize,
    /// Total evaluation budget `H`.
    pub budget: usize,
    pub init_batch_size: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    /// Defaults for a task: 100x100 grid, `N_B = 256`, `H = 102_400`.
    pub fn for_task(task: TaskSpec) -> Self {
        Self {
            task,
            grid_shape: vec![100, 100],
            batch_size: 256,
            budget: 102_400,
            init_batch_size: 256,
            sigma1: IsoLineParams::DEFAULT_SIGMA1,
            sigma2: IsoLineParams::DEFAULT_SIGMA2,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.init_batch_size == 0 {
            return bad("initialization batch must be at least 1; selection needs a non-empty archive".into());
        }
        if self.budget < self.init_batch_size {
            return bad(format!(
                "budget {} is smaller than the initialization batch {}",
                self.budget, self.init_batch_size
            ));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Post-initialization iterations: `ceil((H - init) / N_B)`.
    pub fn iterations(&self) -> usize {
        (self.budget - self.init_batch_size).div_ceil(self.batch_size)
    }

    /// Evaluations beyond the budget spent by the last full-size batch.
    pub fn overshoot(&self) -> usize {
        self.init_batch_size + self.iterations() * self.batch_size - self.budget
    }

    pub fn tessellation(&self, scoring: &dyn ScoringFunction) -> Result<GridTessellation, RunError> {
        if self.grid_shape.len() != scoring.descriptor_dims() {
            return Err(RunError::Config(format!(
                "grid has {} dimensions but task {} has {}-dimensional descriptors",
                self.grid_shape.len(),
                scoring.name(),
                scoring.descriptor_dims()
            )));
        }
        let (lower, upper) = scoring.descriptor_bounds();
        GridTessellation::new(lower, upper, self.grid_shape.clone()).map_err(|e| RunError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub archive: Archive,
    /// Record 0 describes the archive right after initialization.
    pub trace: Vec<MetricsRecord>,
    pub total_wall_clock: Duration,
    pub total_evaluations: usize,
    pub iterations: usize,
}

// RNG family layout: counters 0..=INIT_RETRIES for initialization attempts,
// then 4 * iteration + {0: selection, 1: variation}.
fn select_stream(seed: u64, iteration: usize) -> RngState {
    RngState::with_counter(seed, 4 * iteration as u64)
}

fn vary_stream(seed: u64, iteration: usize) -> RngState {
    RngState::with_counter(seed, 4 * iteration as u64 + 1)
}

fn to_candidates(genotypes: Vec<Vec<f64>>, evaluations: Vec<Evaluation>) -> Vec<Candidate> {
    genotypes
        .into_iter()
        .zip(evaluations)
        .map(|(genotype, e)| Candidate {
            genotype,
            fitness: e.raw_fitness,
            descriptor: e.descriptor,
            dead: e.dead,
        })
        .collect()
}

pub struct Initialized {
    pub archive: Archive,
    pub evaluations: usize,
    pub elapsed: Duration,
}

/// Fills a fresh archive with uniformly random genotypes.
pub fn initialize(
    config: &RunConfig,
    scoring: &dyn ScoringFunction,
    executor: &Executor,
) -> Result<Initialized, RunError> {
    config.validate()?;
    let tess = config.tessellation(scoring)?;
    let bounds = scoring.genotype_bounds();
    let mut archive = Archive::new(tess, scoring.genotype_len());
    let mut evaluations = 0;
    let start = Instant::now();
    for attempt in 0..=INIT_RETRIES {
        let rng = RngState::with_counter(config.seed, attempt as u64);
        let genotypes = executor.map_range(config.init_batch_size, |slot| {
            let mut s = rng.stream(slot as u64);
            bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&lo, &hi)| s.uniform_range(lo, hi))
                .collect::<Vec<f64>>()
        });
        let batch = evaluate_batch(scoring, &genotypes, executor)
            .map_err(|e| RunError::Step { iteration: 0, source: e.into() })?;
        evaluations += genotypes.len();
        archive
            .batched_add(&to_candidates(genotypes, batch.evaluations))
            .map_err(|e| RunError::Step { iteration: 0, source: e.into() })?;
        if !archive.is_empty() {
            return Ok(Initialized {
                archive,
                evaluations,
                elapsed: start.elapsed(),
            });
        }
    }
    Err(RunError::InitFailed {
        attempts: INIT_RETRIES + 1,
    })
}

/// Runs the configured task.
pub fn run(config: &RunConfig) -> Result<RunResult, RunError> {
    let scoring = config.task.build()?;
    run_with(config, scoring.as_ref())
}

/// Runs with an explicit scoring function; `config.task` is not consulted.
pub fn run_with(config: &RunConfig, scoring: &dyn ScoringFunction) -> Result<RunResult, RunError> {
    config.validate()?;
    let executor = Executor::new(config.workers).map_err(|e| RunError::Config(e.to_string()))?;
    let params = IsoLineParams::new(config.sigma1, config.sigma2, Some(scoring.genotype_bounds()))
        .map_err(|e| RunError::Config(e.to_string()))?;
    let offset = scoring.fitness_offset();
    let start = Instant::now();

    let init = initialize(config, scoring, &executor)?;
    let mut archive = init.archive;
    let mut total_evaluations = init.evaluations;
    let iterations = config.iterations();
    let mut trace = Vec::with_capacity(iterations + 1);
    trace.push(MetricsRecord::from_archive(
        &archive,
        offset,
        0,
        total_evaluations,
        init.evaluations,
        init.elapsed.as_secs_f64(),
    ));

    for iteration in 1..=iterations {
        let step = |archive: &mut Archive| -> Result<(), StepError> {
            let (p1, p2) = select_parents(archive, config.batch_size, select_stream(config.seed, iteration))?;
            let offspring = iso_line(&p1, &p2, &params, vary_stream(config.seed, iteration), &executor)?;
            let batch = evaluate_batch(scoring, &offspring, &executor)?;
            archive.batched_add(&to_candidates(offspring, batch.evaluations))?;
            Ok(())
        };
        let t0 = Instant::now();
        step(&mut archive).map_err(|source| RunError::Step { iteration, source })?;
        let elapsed = t0.elapsed().as_secs_f64();
        total_evaluations += config.batch_size;
        trace.push(MetricsRecord::from_archive(
            &archive,
            offset,
            iteration,
            total_evaluations,
            config.batch_size,
            elapsed,
        ));
    }

    Ok(RunResult {
        archive,
        trace,
        total_wall_clock: start.elapsed(),
        total_evaluations,
        iterations,
    })
}
