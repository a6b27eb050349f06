//! Experiment harness for batched MAP-Elites: single runs, batch-size
//! ablations with rank-sum comparisons, throughput sweeps and heatmaps.

pub mod experiments;
pub mod heatmap;
pub mod output;
pub mod settings;

pub use experiments::{
    run_ablation, run_single, run_throughput, AblationSpec, SweepReport, ThroughputPoint, ThroughputSpec,
};
pub use settings::Settings;
