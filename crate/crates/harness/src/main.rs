use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use qd_core::archive::GenotypeFormat;
use qd_harness::experiments::{throughput_csv, write_throughput};
use qd_harness::heatmap::export_heatmap;
use qd_harness::settings::WORKERS_ENV;
use qd_harness::{run_ablation, run_single, run_throughput, AblationSpec, Settings, ThroughputSpec};

/// Exit status when some runs of a sweep failed.
const PARTIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "qd", version, about = "Batched MAP-Elites experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run MAP-Elites once and write metrics, archive and metadata.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Sweep batch sizes at a fixed evaluation budget with replications.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Measure evaluations per second along a batch-size ladder.
    Throughput {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated batch sizes (default 64,128,...,4096).
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        /// Timed iterations per point.
        #[arg(long)]
        iterations: Option<usize>,
        /// Additional worker counts to measure every point with.
        #[arg(long, value_delimiter = ',')]
        compare_workers: Vec<usize>,
    },
    /// Render an archive.csv (with its archive.json sidecar) as a PGM heatmap.
    Heatmap {
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per cell side.
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// rastrigin, sphere or point_nav.
    #[arg(long)]
    task: Option<String>,
    /// Cells per descriptor dimension, e.g. 100x100 or 100,100.
    #[arg(long)]
    grid_shape: Option<String>,
    /// Total evaluation budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Initialization batch (defaults to the batch size).
    #[arg(long)]
    init_batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Parameter count for rastrigin and sphere.
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    /// csv or bin.
    #[arg(long)]
    genotype_format: Option<GenotypeFormat>,
    /// JSON file with any of the settings above; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(['x', ','])
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad grid shape {s:?}")))
        .collect()
}

impl CommonArgs {
    fn settings(&self, extra: Settings) -> Result<Settings> {
        let base = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags = Settings {
            task: self.task.clone(),
            grid_shape: self.grid_shape.as_deref().map(parse_grid).transpose()?,
            budget: self.budget,
            init_batch_size: self.init_batch_size,
            seed: self.seed,
            workers: self.workers,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            dims: self.dims,
            hidden_size: self.hidden_size,
            episode_len: self.episode_len,
            genotype_format: self.genotype_format,
            ..extra
        };
        let merged = base.overlay(flags);
        if merged.task.is_none() {
            Cli::command()
                .error(
                    ErrorKind::MissingRequiredArgument,
                    "--task is required (rastrigin, sphere or point_nav), either as a flag or in --config",
                )
                .exit();
        }
        Ok(merged)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { common, batch_size } => {
            let settings = common.settings(Settings {
                batch_size,
                ..Default::default()
            })?;
            let run = run_single(&settings, &common.out)?;
            let m = &run.meta;
            println!(
                "{}: {} iterations, {} evaluations, qd-score {}, coverage {}, {:.2}s",
                m.config.task.name(),
                m.iterations,
                m.total_evaluations,
                m.final_qd_score,
                m.final_coverage,
                m.wall_clock_seconds
            );
            for f in &run.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            common,
            batch_sizes,
            replications,
        } => {
            let settings = common.settings(Settings {
                batch_sizes,
                replications,
                ..Default::default()
            })?;
            let spec = AblationSpec::from_settings(&settings)?;
            let report = run_ablation(&spec, &common.out, |line| eprintln!("{line}"))?;
            for s in &report.per_batch {
                println!(
                    "batch {:>6}: median qd {:.3} (IQR {:.3}..{:.3}), median iterations {}",
                    s.batch_size, s.median_qd_score, s.q1_qd_score, s.q3_qd_score, s.median_iterations
                );
            }
            for c in &report.comparisons {
                println!(
                    "{} vs {}: U = {}, p = {:.4}, corrected p = {:.4}",
                    c.batch_a, c.batch_b, c.u, c.p_raw, c.p_corrected
                );
            }
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} runs failed; see summary.json", report.failures.len());
                Ok(ExitCode::from(PARTIAL_FAILURE))
            }
        }
        Command::Throughput {
            common,
            batch_sizes,
            iterations,
            compare_workers,
        } => {
            let settings = common.settings(Settings {
                batch_sizes,
                iterations,
                ..Default::default()
            })?;
            let spec = ThroughputSpec::from_settings(&settings, &compare_workers)?;
            let points = run_throughput(&spec, |p| match &p.error {
                None => eprintln!(
                    "batch {:>6} workers {:>3}: {:.0} eval/s, {:.3}s",
                    p.batch_size, p.workers, p.evals_per_second, p.runtime_seconds
                ),
                Some(e) => eprintln!("batch {:>6} workers {:>3}: FAILED: {e}", p.batch_size, p.workers),
            });
            write_throughput(&points, &common.out)?;
            print!("{}", throughput_csv(&points));
            if points.iter().any(|p| p.error.is_some()) {
                Ok(ExitCode::from(PARTIAL_FAILURE))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Heatmap { archive, out, scale } => {
            if out.extension().is_some_and(|e| e == "json") {
                bail!("--out names the image; the legend is written next to it with a .json extension");
            }
            let map = export_heatmap(&archive, &out, scale)?;
            println!(
                "wrote {} ({}x{} px) and {}",
                out.display(),
                map.legend.width,
                map.legend.height,
                out.with_extension("json").display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
