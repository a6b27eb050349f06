//! Experiment settings shared by the CLI flags and JSON config files.
//!
//! Every field is optional; a config file is overlaid by CLI flags and the
//! remaining gaps are filled with defaults when a concrete config is built.

use std::path::Path;

use anyhow::{bail, Context, Result};
use qd_core::archive::GenotypeFormat;
use qd_core::mapelites::RunConfig;
use qd_core::parallel::available_workers;
use qd_core::tasks::{PointNavConfig, TaskSpec};
use qd_core::variation::IsoLineParams;
use serde::{Deserialize, Serialize};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "QD_WORKERS";

pub const DEFAULT_BUDGET: usize = 102_400;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_ABLATION_BATCHES: [usize; 4] = [64, 256, 1024, 4096];
pub const DEFAULT_REPLICATIONS: usize = 5;
pub const DEFAULT_THROUGHPUT_ITERATIONS: usize = 100;
pub const DEFAULT_GRID: [usize; 2] = [100, 100];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub task: Option<String>,
    pub grid_shape: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub batch_sizes: Option<Vec<usize>>,
    pub budget: Option<usize>,
    pub init_batch_size: Option<usize>,
    pub replications: Option<usize>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    /// Parameter count of rastrigin/sphere.
    pub dims: Option<usize>,
    pub hidden_size: Option<usize>,
    pub episode_len: Option<usize>,
    pub genotype_format: Option<GenotypeFormat>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `top` win over `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay_fields!(base, top; task, grid_shape, batch_size, batch_sizes, budget, init_batch_size,
            replications, iterations, seed, workers, sigma1, sigma2, dims, hidden_size, episode_len,
            genotype_format)
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let Some(name) = self.task.as_deref() else {
            bail!("no task given (use --task or a config file)");
        };
        let mut spec = TaskSpec::by_name(name)?;
        match &mut spec {
            TaskSpec::Rastrigin { dims } | TaskSpec::Sphere { dims } => {
                if let Some(d) = self.dims {
                    *dims = d;
                }
                if self.hidden_size.is_some() || self.episode_len.is_some() {
                    bail!("--hidden-size and --episode-len apply to point_nav only");
                }
            }
            TaskSpec::PointNav(cfg) => {
                let defaults = PointNavConfig::default();
                cfg.hidden_size = self.hidden_size.unwrap_or(defaults.hidden_size);
                cfg.episode_len = self.episode_len.unwrap_or(defaults.episode_len);
                if self.dims.is_some() {
                    bail!("--dims applies to rastrigin and sphere only");
                }
            }
        }
        spec.build()?;
        Ok(spec)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(available_workers)
    }

    /// Concrete run configuration for one batch size; the initialization
    /// batch defaults to the batch size.
    pub fn run_config_for(&self, batch_size: usize) -> Result<RunConfig> {
        let task = self.task_spec()?;
        let config = RunConfig {
            task,
            grid_shape: self.grid_shape.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec()),
            batch_size,
            budget: self.budget.unwrap_or(DEFAULT_BUDGET),
            init_batch_size: self.init_batch_size.unwrap_or(batch_size),
            sigma1: self.sigma1.unwrap_or(IsoLineParams::DEFAULT_SIGMA1),
            sigma2: self.sigma2.unwrap_or(IsoLineParams::DEFAULT_SIGMA2),
            seed: self.seed.unwrap_or(0),
            workers: self.workers(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        self.run_config_for(self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE))
    }

    pub fn ablation_batches(&self) -> Vec<usize> {
        self.batch_sizes.clone().unwrap_or_else(|| DEFAULT_ABLATION_BATCHES.to_vec())
    }

    /// Doubling ladder from 64 up to 4096 unless overridden.
    pub fn throughput_batches(&self) -> Vec<usize> {
        self.batch_sizes
            .clone()
            .unwrap_or_else(|| (6..=12).map(|p| 1usize << p).collect())
    }
}
