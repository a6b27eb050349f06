//! Scoring functions: black-box benchmarks and an episodic navigation task
//! driven by a small MLP policy.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::Executor;
use crate::variation::GenotypeBounds;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("genotype has length {got}, task expects {expected}")]
    GenotypeLength { expected: usize, got: usize },
    #[error("genotype entry {index} is not finite")]
    NonFiniteGenotype { index: usize },
    #[error("batch position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<TaskError>,
    },
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown task {0:?} (expected rastrigin, sphere or point_nav)")]
    UnknownTask(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub raw_fitness: f64,
    pub descriptor: Vec<f64>,
    pub dead: bool,
    /// Step at which an episode left the arena, if it did.
    pub fail_step: Option<usize>,
}

/// A pure mapping from genotype to fitness and descriptor.
pub trait ScoringFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn genotype_len(&self) -> usize;
    fn descriptor_dims(&self) -> usize;
    /// `(lower, upper)` of the descriptor space.
    fn descriptor_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Search-space box used for initialization and offspring clamping.
    fn genotype_bounds(&self) -> GenotypeBounds;
    /// Constant added to fitness inside the QD-score so that every summand is non-negative.
    fn fitness_offset(&self) -> f64;
    fn evaluate(&self, genotype: &[f64]) -> Result<Evaluation, TaskError>;
}

fn check_genotype(genotype: &[f64], expected: usize) -> Result<(), TaskError> {
    if genotype.len() != expected {
        return Err(TaskError::GenotypeLength {
            expected,
            got: genotype.len(),
        });
    }
    match genotype.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(TaskError::NonFiniteGenotype { index }),
        None => Ok(()),
    }
}

/// `-10 N - sum(x_i^2 - 10 cos(2 pi x_i))` over the raw `[0, 1]` genotype.
#[derive(Clone, Debug, PartialEq)]
pub struct Rastrigin {
    pub dims: usize,
}

impl Rastrigin {
    pub fn fitness(theta: &[f64]) -> f64 {
        let n = theta.len() as f64;
        let sum: f64 = theta
            .iter()
            .map(|&x| x * x - 10.0 * (std::f64::consts::TAU * x).cos())
            .sum();
        -10.0 * n - sum
    }
}

impl ScoringFunction for Rastrigin {
    fn name(&self) -> &'static str {
        "rastrigin"
    }

    fn genotype_len(&self) -> usize {
        self.dims
    }

    fn descriptor_dims(&self) -> usize {
        2
    }

    fn descriptor_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; 2], vec![1.0; 2])
    }

    fn genotype_bounds(&self) -> GenotypeBounds {
        GenotypeBounds::uniform(self.dims, 0.0, 1.0)
    }

    // Each summand lies in [-10, 10.25] on [0, 1].
    fn fitness_offset(&self) -> f64 {
        20.25 * self.dims as f64
    }

    fn evaluate(&self, genotype: &[f64]) -> Result<Evaluation, TaskError> {
        check_genotype(genotype, self.dims)?;
        Ok(Evaluation {
            raw_fitness: Self::fitness(genotype),
            descriptor: vec![genotype[0], genotype[1]],
            dead: false,
            fail_step: None,
        })
    }
}

/// `-||x||^2` over the raw `[0, 1]` genotype.
#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub dims: usize,
}

impl Sphere {
    pub fn fitness(theta: &[f64]) -> f64 {
        0.0 - theta.iter().map(|x| x * x).sum::<f64>()
    }
}

impl ScoringFunction for Sphere {
    fn name(&self) -> &'static str {
        "sphere"
    }

    fn genotype_len(&self) -> usize {
        self.dims
    }

    fn descriptor_dims(&self) -> usize {
        2
    }

    fn descriptor_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; 2], vec![1.0; 2])
    }

    fn genotype_bounds(&self) -> GenotypeBounds {
        GenotypeBounds::uniform(self.dims, 0.0, 1.0)
    }

    fn fitness_offset(&self) -> f64 {
        self.dims as f64
    }

    fn evaluate(&self, genotype: &[f64]) -> Result<Evaluation, TaskError> {
        check_genotype(genotype, self.dims)?;
        Ok(Evaluation {
            raw_fitness: Self::fitness(genotype),
            descriptor: vec![genotype[0], genotype[1]],
            dead: false,
            fail_step: None,
        })
    }
}

/// Fully connected tanh network over a flat parameter vector.
///
/// Each layer stores its weight matrix as `fan_out` rows of `fan_in`
/// entries, followed by `fan_out` biases. Layers appear in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    layers: Vec<usize>,
}

/// One layer's parameters, unflattened.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl MlpPolicy {
    pub fn new(layers: Vec<usize>) -> Result<Self, TaskError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(TaskError::InvalidConfig(format!("bad layer sizes {layers:?}")));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn unflatten(&self, params: &[f64]) -> Result<Vec<DenseLayer>, TaskError> {
        self.check_len(params)?;
        let mut offset = 0;
        Ok(self
            .layers
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = (0..fan_out)
                    .map(|o| params[offset + o * fan_in..offset + (o + 1) * fan_in].to_vec())
                    .collect();
                offset += fan_in * fan_out;
                let biases = params[offset..offset + fan_out].to_vec();
                offset += fan_out;
                DenseLayer { weights, biases }
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[DenseLayer]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn check_len(&self, params: &[f64]) -> Result<(), TaskError> {
        if params.len() != self.num_params() {
            return Err(TaskError::GenotypeLength {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Forward pass with tanh on every layer, including the output.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, TaskError> {
        self.check_len(params)?;
        if input.len() != self.input_size() {
            return Err(TaskError::InvalidConfig(format!(
                "observation has {} entries, policy expects {}",
                input.len(),
                self.input_size()
            )));
        }
        let mut scratch = (Vec::new(), Vec::new());
        Ok(self.forward_unchecked(params, input, &mut scratch).to_vec())
    }

    fn forward_unchecked<'a>(
        &self,
        params: &[f64],
        input: &[f64],
        scratch: &'a mut (Vec<f64>, Vec<f64>),
    ) -> &'a [f64] {
        let (cur, next) = scratch;
        cur.clear();
        cur.extend_from_slice(input);
        let mut offset = 0;
        for w in self.layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            next.clear();
            next.extend(weights.chunks_exact(fan_in).zip(biases).map(|(row, b)| {
                let z: f64 = row.iter().zip(cur.iter()).map(|(a, x)| a * x).sum::<f64>() + b;
                z.tanh()
            }));
            std::mem::swap(cur, next);
        }
        cur
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointNavConfig {
    pub episode_len: usize,
    pub dt: f64,
    pub damping: f64,
    pub arena_half_width: f64,
    pub survival_reward: f64,
    pub torque_cost: f64,
    pub hidden_size: usize,
    /// Policy weights are sampled and clamped within `[-weight_bound, weight_bound]`.
    pub weight_bound: f64,
}

impl Default for PointNavConfig {
    fn default() -> Self {
        Self {
            episode_len: 100,
            dt: 0.1,
            damping: 0.9,
            arena_half_width: 1.0,
            survival_reward: 1.0,
            torque_cost: 0.01,
            hidden_size: 8,
            weight_bound: 1.0,
        }
    }
}

/// A point mass steered by an MLP policy `4 -> h -> h -> 2`.
///
/// The observation is `(x, y, vx, vy)`. Each step applies
/// `v <- damping * v + a * dt` then `p <- p + v * dt` and earns
/// `survival_reward - torque_cost * |a|^2`. Leaving the arena ends the
/// episode; the descriptor is then the last in-bounds position.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNav {
    config: PointNavConfig,
    policy: MlpPolicy,
}

impl PointNav {
    pub fn new(config: PointNavConfig) -> Result<Self, TaskError> {
        let c = &config;
        let positive = [
            ("dt", c.dt),
            ("arena_half_width", c.arena_half_width),
            ("weight_bound", c.weight_bound),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(TaskError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if !c.damping.is_finite() || !c.survival_reward.is_finite() || !(c.torque_cost >= 0.0) {
            return Err(TaskError::InvalidConfig("damping, survival_reward and torque_cost must be finite, torque_cost >= 0".into()));
        }
        if c.episode_len == 0 {
            return Err(TaskError::InvalidConfig("episode_len must be positive".into()));
        }
        let policy = MlpPolicy::new(vec![4, c.hidden_size, c.hidden_size, 2])?;
        Ok(Self { config, policy })
    }

    pub fn config(&self) -> &PointNavConfig {
        &self.config
    }

    pub fn policy(&self) -> &MlpPolicy {
        &self.policy
    }
}

impl ScoringFunction for PointNav {
    fn name(&self) -> &'static str {
        "point_nav"
    }

    fn genotype_len(&self) -> usize {
        self.policy.num_params()
    }

    fn descriptor_dims(&self) -> usize {
        2
    }

    fn descriptor_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.config.arena_half_width;
        (vec![-h; 2], vec![h; 2])
    }

    fn genotype_bounds(&self) -> GenotypeBounds {
        let b = self.config.weight_bound;
        GenotypeBounds::uniform(self.genotype_len(), -b, b)
    }

    // |a|^2 <= 2 per step, so each step earns at least r_s - 2c.
    fn fitness_offset(&self) -> f64 {
        let c = &self.config;
        c.episode_len as f64 * (2.0 * c.torque_cost - c.survival_reward.min(0.0))
    }

    fn evaluate(&self, genotype: &[f64]) -> Result<Evaluation, TaskError> {
        check_genotype(genotype, self.genotype_len())?;
        let c = &self.config;
        let (mut x, mut y, mut vx, mut vy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut reward = 0.0;
        let mut scratch = (Vec::with_capacity(c.hidden_size), Vec::with_capacity(c.hidden_size));
        for step in 0..c.episode_len {
            let a = self.policy.forward_unchecked(genotype, &[x, y, vx, vy], &mut scratch);
            let (ax, ay) = (a[0], a[1]);
            let nvx = c.damping * vx + ax * c.dt;
            let nvy = c.damping * vy + ay * c.dt;
            let nx = x + nvx * c.dt;
            let ny = y + nvy * c.dt;
            if !(nx.is_finite() && ny.is_finite() && nvx.is_finite() && nvy.is_finite()) {
                return Ok(Evaluation {
                    raw_fitness: reward,
                    descriptor: vec![x, y],
                    dead: true,
                    fail_step: Some(step),
                });
            }
            if nx.abs() > c.arena_half_width || ny.abs() > c.arena_half_width {
                return Ok(Evaluation {
                    raw_fitness: reward,
                    descriptor: vec![x, y],
                    dead: step == 0,
                    fail_step: Some(step),
                });
            }
            (x, y, vx, vy) = (nx, ny, nvx, nvy);
            reward += c.survival_reward - c.torque_cost * (ax * ax + ay * ay);
        }
        Ok(Evaluation {
            raw_fitness: reward,
            descriptor: vec![x, y],
            dead: false,
            fail_step: None,
        })
    }
}

/// Serializable task selection; also the CLI registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TaskSpec {
    Rastrigin { dims: usize },
    Sphere { dims: usize },
    PointNav(PointNavConfig),
}

impl TaskSpec {
    pub const NAMES: [&'static str; 3] = ["rastrigin", "sphere", "point_nav"];
    pub const DEFAULT_BENCHMARK_DIMS: usize = 100;

    /// Task with default parameters.
    pub fn by_name(name: &str) -> Result<Self, TaskError> {
        match name {
            "rastrigin" => Ok(Self::Rastrigin {
                dims: Self::DEFAULT_BENCHMARK_DIMS,
            }),
            "sphere" => Ok(Self::Sphere {
                dims: Self::DEFAULT_BENCHMARK_DIMS,
            }),
            "point_nav" => Ok(Self::PointNav(PointNavConfig::default())),
            other => Err(TaskError::UnknownTask(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rastrigin { .. } => "rastrigin",
            Self::Sphere { .. } => "sphere",
            Self::PointNav(_) => "point_nav",
        }
    }

    pub fn build(&self) -> Result<Box<dyn ScoringFunction>, TaskError> {
        match self {
            Self::Rastrigin { dims } | Self::Sphere { dims } if *dims < 2 => Err(TaskError::InvalidConfig(
                format!("benchmark needs at least 2 parameters for its descriptor, got {dims}"),
            )),
            Self::Rastrigin { dims } => Ok(Box::new(Rastrigin { dims: *dims })),
            Self::Sphere { dims } => Ok(Box::new(Sphere { dims: *dims })),
            Self::PointNav(cfg) => Ok(Box::new(PointNav::new(cfg.clone())?)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchEvaluation {
    pub evaluations: Vec<Evaluation>,
    pub elapsed: Duration,
}

/// Evaluates a batch on up to `executor.workers()` threads. Results follow
/// input order; the first failing position is reported.
pub fn evaluate_batch(
    scoring: &dyn ScoringFunction,
    genotypes: &[Vec<f64>],
    executor: &Executor,
) -> Result<BatchEvaluation, TaskError> {
    let start = Instant::now();
    let results = executor.map(genotypes, |_, g| scoring.evaluate(g));
    let elapsed = start.elapsed();
    let mut evaluations = Vec::with_capacity(results.len());
    for (position, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => evaluations.push(e),
            Err(e) => {
                return Err(TaskError::AtPosition {
                    position,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(BatchEvaluation { evaluations, elapsed })
}
