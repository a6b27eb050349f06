//! Batched MAP-Elites.
//!
//! A fixed-capacity grid [`archive`], the iso-line [`variation`] operator,
//! scoring [`tasks`] evaluated on a worker pool, the [`mapelites`] loop,
//! and the [`metrics`] used to compare runs.

pub mod archive;
pub mod mapelites;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod tasks;
pub mod variation;

pub use archive::{AddOutcome, Archive, ArchiveError, Candidate, GridTessellation};
pub use mapelites::{run, run_with, RunConfig, RunError, RunResult};
pub use metrics::MetricsRecord;
pub use parallel::Executor;
pub use rng::RngState;
pub use tasks::{Evaluation, ScoringFunction, TaskSpec};
pub use variation::{GenotypeBounds, IsoLineParams};
