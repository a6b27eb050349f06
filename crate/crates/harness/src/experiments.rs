//! Single runs, batch-size ablations and throughput sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use qd_core::archive::GenotypeFormat;
use qd_core::mapelites::{run_with, RunConfig, RunResult};
use qd_core::metrics::{evals_per_second, quantile, rank_sum_test, PValueMethod};
use serde::{Deserialize, Serialize};

use crate::output::{write_run_artifacts, DirLock, FileSet, RunMeta, Software};
use crate::settings::{Settings, DEFAULT_REPLICATIONS, DEFAULT_THROUGHPUT_ITERATIONS};

fn execute(config: &RunConfig) -> Result<(RunResult, f64)> {
    let task = config.task.build()?;
    let result = run_with(config, task.as_ref())?;
    Ok((result, task.fitness_offset()))
}

#[derive(Clone, Debug)]
pub struct SingleRun {
    pub meta: RunMeta,
    pub files: Vec<PathBuf>,
}

/// Executes one run and writes its artifacts into `out`.
/// Nothing is left behind in `out` if the run or a write fails.
pub fn run_single(settings: &Settings, out: &Path) -> Result<SingleRun> {
    let config = settings.run_config()?;
    let _lock = DirLock::acquire(out)?;
    let (result, offset) = execute(&config)?;
    let mut files = FileSet::new();
    let meta = write_run_artifacts(
        &mut files,
        out,
        &config,
        &result,
        offset,
        settings.genotype_format.unwrap_or(GenotypeFormat::Csv),
    )?;
    Ok(SingleRun {
        meta,
        files: files.commit(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub settings: Settings,
    pub batch_sizes: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
}

impl AblationSpec {
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        let batch_sizes = settings.ablation_batches();
        let replications = settings.replications.unwrap_or(DEFAULT_REPLICATIONS);
        if batch_sizes.is_empty() || batch_sizes.contains(&0) {
            bail!("batch sizes must be a non-empty list of positive integers");
        }
        if replications == 0 {
            bail!("replications must be at least 1");
        }
        // Fail fast on configuration errors before any run starts.
        for &b in &batch_sizes {
            settings.run_config_for(b)?;
        }
        Ok(Self {
            settings: settings.clone(),
            batch_sizes,
            replications,
            base_seed: settings.seed.unwrap_or(0),
        })
    }

    pub fn run_config(&self, batch_size: usize, replication: usize) -> Result<RunConfig> {
        let mut config = self.settings.run_config_for(batch_size)?;
        config.seed = self.base_seed + replication as u64;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub batch_size: usize,
    pub replication: usize,
    pub seed: u64,
    pub iterations: usize,
    pub total_evaluations: usize,
    pub final_qd_score: f64,
    pub final_coverage: usize,
    pub final_best_objective: Option<f64>,
    pub runtime_seconds: f64,
    /// Monotone QD-score and coverage over the whole trace.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_size: usize,
    pub runs: usize,
    pub median_qd_score: f64,
    pub q1_qd_score: f64,
    pub q3_qd_score: f64,
    pub iqr_qd_score: f64,
    pub median_iterations: f64,
    pub median_runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub batch_a: usize,
    pub batch_b: usize,
    pub u: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub method: PValueMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub batch_size: usize,
    pub replication: usize,
    pub error: String,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub software: Software,
    pub task: String,
    pub budget: usize,
    pub grid_shape: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub runs: Vec<RunOutcome>,
    pub per_batch: Vec<BatchSummary>,
    pub comparisons: Vec<PairwiseComparison>,
    /// Number of pairwise comparisons; multiplies every raw p-value.
    pub bonferroni_factor: usize,
    pub failures: Vec<RunFailure>,
}

impl SweepReport {
    pub fn outcomes_for(&self, batch_size: usize) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(move |r| r.batch_size == batch_size)
    }

    pub fn summary_for(&self, batch_size: usize) -> Option<&BatchSummary> {
        self.per_batch.iter().find(|s| s.batch_size == batch_size)
    }
}

pub const ABLATION_CSV_HEADER: &str =
    "batch_size,replication,seed,iteration,cumulative_evaluations,qd_score,coverage,coverage_fraction,best_objective";
pub const ABLATION_TIMING_HEADER: &str =
    "batch_size,replication,iteration,iteration_wall_clock,cumulative_wall_clock,evals_per_second,warmup";

fn is_monotone(result: &RunResult) -> bool {
    result
        .trace
        .windows(2)
        .all(|w| w[1].qd_score >= w[0].qd_score && w[1].coverage >= w[0].coverage)
}

/// Runs every (batch size, replication) pair sequentially and writes
/// `ablation.csv`, `ablation_timing.csv`, `summary.json` and per-run
/// artifacts under `runs/`.
pub fn run_ablation(spec: &AblationSpec, out: &Path, mut progress: impl FnMut(&str)) -> Result<SweepReport> {
    let _lock = DirLock::acquire(out)?;
    let format = spec.settings.genotype_format.unwrap_or(GenotypeFormat::Csv);
    let mut files = FileSet::new();
    let mut long = format!("{ABLATION_CSV_HEADER}\n");
    let mut timing = format!("{ABLATION_TIMING_HEADER}\n");
    let mut runs = Vec::new();
    let mut failures = Vec::new();

    for &batch_size in &spec.batch_sizes {
        for replication in 0..spec.replications {
            let config = spec.run_config(batch_size, replication)?;
            let run_dir = out.join("runs").join(format!("bs{batch_size}")).join(format!("rep{replication}"));
            let attempt = execute(&config).and_then(|(result, offset)| {
                let mut run_files = FileSet::new();
                write_run_artifacts(&mut run_files, &run_dir, &config, &result, offset, format)?;
                run_files.commit();
                Ok(result)
            });
            let result = match attempt {
                Ok(r) => r,
                Err(e) => {
                    progress(&format!("batch {batch_size} rep {replication}: FAILED: {e:#}"));
                    failures.push(RunFailure {
                        batch_size,
                        replication,
                        error: format!("{e:#}"),
                    });
                    continue;
                }
            };
            let mut clock = 0.0;
            for r in &result.trace {
                clock += r.iteration_wall_clock;
                let _ = writeln!(
                    long,
                    "{batch_size},{replication},{},{}",
                    config.seed,
                    r.csv_row()
                );
                let _ = writeln!(
                    timing,
                    "{batch_size},{replication},{},{},{},{},{}",
                    r.iteration,
                    r.iteration_wall_clock,
                    clock,
                    r.evals_per_second,
                    (r.iteration == 1) as u8
                );
            }
            let last = result.trace.last().unwrap();
            let outcome = RunOutcome {
                batch_size,
                replication,
                seed: config.seed,
                iterations: result.iterations,
                total_evaluations: result.total_evaluations,
                final_qd_score: last.qd_score,
                final_coverage: last.coverage,
                final_best_objective: last.best_objective,
                runtime_seconds: result.total_wall_clock.as_secs_f64(),
                monotone: is_monotone(&result),
            };
            progress(&format!(
                "batch {batch_size} rep {replication}: {} iterations, qd {:.3}, coverage {}, {:.2}s",
                outcome.iterations, outcome.final_qd_score, outcome.final_coverage, outcome.runtime_seconds
            ));
            runs.push(outcome);
        }
    }

    let report = summarize(spec, runs, failures)?;
    files.write(out.join("ablation.csv"), long.as_bytes())?;
    files.write(out.join("ablation_timing.csv"), timing.as_bytes())?;
    files.write_json(out.join("summary.json"), &report)?;
    files.commit();
    Ok(report)
}

fn summarize(spec: &AblationSpec, runs: Vec<RunOutcome>, failures: Vec<RunFailure>) -> Result<SweepReport> {
    let config = spec.run_config(spec.batch_sizes[0], 0)?;
    let scores = |b: usize| -> Vec<f64> {
        runs.iter().filter(|r| r.batch_size == b).map(|r| r.final_qd_score).collect()
    };
    let per_batch = spec
        .batch_sizes
        .iter()
        .filter_map(|&b| {
            let s = scores(b);
            let of = |f: fn(&RunOutcome) -> f64| -> Vec<f64> {
                runs.iter().filter(|r| r.batch_size == b).map(f).collect()
            };
            let q1 = quantile(&s, 0.25)?;
            let q3 = quantile(&s, 0.75)?;
            Some(BatchSummary {
                batch_size: b,
                runs: s.len(),
                median_qd_score: quantile(&s, 0.5)?,
                q1_qd_score: q1,
                q3_qd_score: q3,
                iqr_qd_score: q3 - q1,
                median_iterations: quantile(&of(|r| r.iterations as f64), 0.5)?,
                median_runtime_seconds: quantile(&of(|r| r.runtime_seconds), 0.5)?,
            })
        })
        .collect();

    let mut pairs = Vec::new();
    for (i, &a) in spec.batch_sizes.iter().enumerate() {
        for &b in &spec.batch_sizes[i + 1..] {
            pairs.push((a, b));
        }
    }
    let factor = pairs.len();
    let comparisons = pairs
        .into_iter()
        .filter_map(|(a, b)| {
            let r = rank_sum_test(&scores(a), &scores(b)).ok()?;
            Some(PairwiseComparison {
                batch_a: a,
                batch_b: b,
                u: r.u,
                p_raw: r.p_value,
                p_corrected: (r.p_value * factor as f64).min(1.0),
                method: r.method,
            })
        })
        .collect();

    Ok(SweepReport {
        software: Software::current(),
        task: config.task.name().into(),
        budget: config.budget,
        grid_shape: config.grid_shape.clone(),
        batch_sizes: spec.batch_sizes.clone(),
        replications: spec.replications,
        base_seed: spec.base_seed,
        runs,
        per_batch,
        comparisons,
        bonferroni_factor: factor,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSpec {
    pub settings: Settings,
    pub batch_sizes: Vec<usize>,
    pub iterations: usize,
    /// Every point is measured once per worker count.
    pub worker_counts: Vec<usize>,
}

impl ThroughputSpec {
    pub fn from_settings(settings: &Settings, extra_workers: &[usize]) -> Result<Self> {
        let batch_sizes = settings.throughput_batches();
        if batch_sizes.is_empty() || batch_sizes.contains(&0) {
            bail!("batch sizes must be a non-empty list of positive integers");
        }
        let iterations = settings.iterations.unwrap_or(DEFAULT_THROUGHPUT_ITERATIONS);
        if iterations == 0 {
            bail!("iterations must be at least 1");
        }
        let mut worker_counts = vec![settings.workers()];
        for &w in extra_workers {
            if w == 0 {
                bail!("worker counts must be positive");
            }
            if !worker_counts.contains(&w) {
                worker_counts.push(w);
            }
        }
        settings.task_spec()?;
        Ok(Self {
            settings: settings.clone(),
            batch_sizes,
            iterations,
            worker_counts,
        })
    }

    /// `iterations` timed iterations after an initialization batch of the same size.
    pub fn run_config(&self, batch_size: usize, workers: usize) -> Result<RunConfig> {
        let mut s = self.settings.clone();
        s.budget = Some(batch_size * (self.iterations + 1));
        s.init_batch_size = Some(batch_size);
        s.workers = Some(workers);
        s.run_config_for(batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub batch_size: usize,
    pub workers: usize,
    pub iterations: usize,
    /// Evaluations performed by the timed iterations.
    pub evaluations: usize,
    pub evals_per_second: f64,
    /// Sum of the timed iteration durations.
    pub runtime_seconds: f64,
    /// QD-score and coverage never decreased during the run.
    pub monotone: bool,
    pub error: Option<String>,
}

pub const THROUGHPUT_CSV_HEADER: &str = "batch_size,workers,iterations,evaluations,evals_per_second,runtime_seconds,status";

pub fn measure_throughput(config: &RunConfig) -> Result<ThroughputPoint> {
    let (result, _) = execute(config)?;
    let timed = &result.trace[1..];
    let batches: Vec<usize> = timed.iter().map(|_| config.batch_size).collect();
    let times: Vec<f64> = timed.iter().map(|r| r.iteration_wall_clock).collect();
    Ok(ThroughputPoint {
        batch_size: config.batch_size,
        workers: config.workers,
        iterations: timed.len(),
        evaluations: batches.iter().sum(),
        evals_per_second: evals_per_second(&batches, &times)?,
        runtime_seconds: times.iter().sum(),
        monotone: is_monotone(&result),
        error: None,
    })
}

/// Measures eval/s along the batch ladder. Failed points are recorded and
/// the sweep continues.
pub fn run_throughput(spec: &ThroughputSpec, mut progress: impl FnMut(&ThroughputPoint)) -> Vec<ThroughputPoint> {
    let mut points = Vec::new();
    for &workers in &spec.worker_counts {
        for &batch_size in &spec.batch_sizes {
            let point = spec
                .run_config(batch_size, workers)
                .and_then(|c| measure_throughput(&c))
                .unwrap_or_else(|e| ThroughputPoint {
                    batch_size,
                    workers,
                    iterations: 0,
                    evaluations: 0,
                    evals_per_second: 0.0,
                    runtime_seconds: 0.0,
                    monotone: false,
                    error: Some(format!("{e:#}")),
                });
            progress(&point);
            points.push(point);
        }
    }
    points
}

pub fn throughput_csv(points: &[ThroughputPoint]) -> String {
    let mut out = format!("{THROUGHPUT_CSV_HEADER}\n");
    for p in points {
        let status = match &p.error {
            None => "ok".to_string(),
            Some(e) => format!("\"error: {}\"", e.replace('"', "'")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.batch_size, p.workers, p.iterations, p.evaluations, p.evals_per_second, p.runtime_seconds, status
        );
    }
    out
}

pub fn write_throughput(points: &[ThroughputPoint], out: &Path) -> Result<Vec<PathBuf>> {
    let _lock = DirLock::acquire(out)?;
    let mut files = FileSet::new();
    files.write(out.join("throughput.csv"), throughput_csv(points).as_bytes())?;
    Ok(files.commit())
}
