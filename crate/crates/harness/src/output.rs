//! Output directory handling and per-run artifacts.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use qd_core::archive::GenotypeFormat;
use qd_core::mapelites::{RunConfig, RunResult};
use qd_core::metrics::MetricsRecord;
use qd_core::rng::RNG_ALGORITHM;
use serde::{Deserialize, Serialize};

pub const LOCK_FILE: &str = ".qd.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => anyhow!(
                    "{} is locked by another qd process (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                ),
                _ => anyhow!("creating lock {}: {e}", path.display()),
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Tracks files written so far; removes them unless committed.
#[derive(Debug, Default)]
pub struct FileSet {
    written: Vec<PathBuf>,
    committed: bool,
}

impl FileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.written.push(path.clone());
        let mut f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for FileSet {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

impl Software {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub software: Software,
    pub rng_algorithm: String,
    pub config: RunConfig,
    pub seed: u64,
    pub fitness_offset: f64,
    pub iterations: usize,
    pub total_evaluations: usize,
    pub budget: usize,
    pub overshoot: usize,
    pub metrics_rows: usize,
    pub final_qd_score: f64,
    pub final_coverage: usize,
    pub final_best_objective: Option<f64>,
    pub wall_clock_seconds: f64,
    /// Iteration whose timing includes warm-up effects.
    pub warmup_iteration: usize,
    pub metrics_columns: String,
    pub timing_columns: String,
}

impl RunMeta {
    pub fn new(config: &RunConfig, result: &RunResult, fitness_offset: f64) -> Self {
        let last = result.trace.last().expect("trace always has the initialization record");
        Self {
            software: Software::current(),
            rng_algorithm: RNG_ALGORITHM.into(),
            config: config.clone(),
            seed: config.seed,
            fitness_offset,
            iterations: result.iterations,
            total_evaluations: result.total_evaluations,
            budget: config.budget,
            overshoot: config.overshoot(),
            metrics_rows: result.trace.len(),
            final_qd_score: last.qd_score,
            final_coverage: last.coverage,
            final_best_objective: last.best_objective,
            wall_clock_seconds: result.total_wall_clock.as_secs_f64(),
            warmup_iteration: 1,
            metrics_columns: MetricsRecord::CSV_HEADER.into(),
            timing_columns: MetricsRecord::TIMING_CSV_HEADER.into(),
        }
    }
}

pub fn metrics_csv(trace: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::CSV_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn timing_csv(trace: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::TIMING_CSV_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&r.timing_csv_row(r.iteration == 1));
        out.push('\n');
    }
    out
}

pub fn genotype_file_name(format: GenotypeFormat) -> &'static str {
    match format {
        GenotypeFormat::Csv => "genotypes.csv",
        GenotypeFormat::Bin => "genotypes.bin",
    }
}

/// Writes metrics.csv, timing.csv, archive.csv, archive.json, the genotype
/// dump and meta.json into `dir`.
pub fn write_run_artifacts(
    files: &mut FileSet,
    dir: &Path,
    config: &RunConfig,
    result: &RunResult,
    fitness_offset: f64,
    genotype_format: GenotypeFormat,
) -> Result<RunMeta> {
    let meta = RunMeta::new(config, result, fitness_offset);
    files.write(dir.join("metrics.csv"), metrics_csv(&result.trace).as_bytes())?;
    files.write(dir.join("timing.csv"), timing_csv(&result.trace).as_bytes())?;
    files.write(dir.join("archive.csv"), result.archive.to_csv().as_bytes())?;
    files.write_json(dir.join("archive.json"), &result.archive.sidecar())?;
    files.write(
        dir.join(genotype_file_name(genotype_format)),
        &result.archive.genotypes_bytes(genotype_format),
    )?;
    files.write_json(dir.join("meta.json"), &meta)?;
    Ok(meta)
}
