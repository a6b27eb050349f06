//! Archive metrics, throughput, and the Wilcoxon rank-sum test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::Archive;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no iterations to average")]
    Empty,
    #[error("{batches} batch sizes but {times} iteration times")]
    LengthMismatch { batches: usize, times: usize },
    #[error("iteration {index} has non-positive duration {seconds} s")]
    NonPositiveTime { index: usize, seconds: f64 },
    #[error("rank-sum test needs at least 3 observations per sample, got {0} and {1}")]
    SampleTooSmall(usize, usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// One row of a run's metrics trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 0 for the initialization batch.
    pub iteration: usize,
    pub cumulative_evaluations: usize,
    pub qd_score: f64,
    pub coverage: usize,
    pub coverage_fraction: f64,
    pub best_objective: Option<f64>,
    pub iteration_wall_clock: f64,
    /// `batch / iteration_wall_clock` for this iteration alone.
    pub evals_per_second: f64,
}

impl MetricsRecord {
    /// Columns that depend only on `(config, seed)`.
    pub const CSV_HEADER: &'static str =
        "iteration,cumulative_evaluations,qd_score,coverage,coverage_fraction,best_objective";
    pub const TIMING_CSV_HEADER: &'static str = "iteration,iteration_wall_clock,evals_per_second,warmup";

    pub fn from_archive(
        archive: &Archive,
        offset: f64,
        iteration: usize,
        cumulative_evaluations: usize,
        batch: usize,
        wall_clock: f64,
    ) -> Self {
        let (coverage, coverage_fraction) = coverage(archive);
        Self {
            iteration,
            cumulative_evaluations,
            qd_score: qd_score(archive, offset),
            coverage,
            coverage_fraction,
            best_objective: best_objective(archive),
            iteration_wall_clock: wall_clock,
            evals_per_second: if wall_clock > 0.0 { batch as f64 / wall_clock } else { 0.0 },
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.cumulative_evaluations,
            self.qd_score,
            self.coverage,
            self.coverage_fraction,
            self.best_objective.map(|b| b.to_string()).unwrap_or_default()
        )
    }

    /// The first timed iteration is flagged as warm-up.
    pub fn timing_csv_row(&self, warmup: bool) -> String {
        format!(
            "{},{},{},{}",
            self.iteration, self.iteration_wall_clock, self.evals_per_second, warmup as u8
        )
    }
}

/// Sum over filled cells of `fitness + offset`.
pub fn qd_score(archive: &Archive, offset: f64) -> f64 {
    archive
        .fitness_slice()
        .iter()
        .filter(|f| !f.is_nan())
        .map(|f| f + offset)
        .sum()
}

/// Filled cell count and fraction of all cells.
pub fn coverage(archive: &Archive) -> (usize, f64) {
    let n = archive.filled_count();
    (n, n as f64 / archive.num_cells() as f64)
}

pub fn best_objective(archive: &Archive) -> Option<f64> {
    archive
        .fitness_slice()
        .iter()
        .copied()
        .filter(|f| !f.is_nan())
        .reduce(f64::max)
}

/// Mean over iterations of `batch_size / iteration_time`.
pub fn evals_per_second(batch_sizes: &[usize], iteration_times: &[f64]) -> Result<f64, MetricsError> {
    if batch_sizes.len() != iteration_times.len() {
        return Err(MetricsError::LengthMismatch {
            batches: batch_sizes.len(),
            times: iteration_times.len(),
        });
    }
    if batch_sizes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    for (index, (&b, &t)) in batch_sizes.iter().zip(iteration_times).enumerate() {
        if !(t > 0.0) {
            return Err(MetricsError::NonPositiveTime { index, seconds: t });
        }
        total += b as f64 / t;
    }
    Ok(total / batch_sizes.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
    /// Every pooled value identical.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Largest per-sample size that still uses the exact null distribution.
pub const EXACT_MAX_SAMPLE: usize = 8;

/// Two-sided Wilcoxon rank-sum (Mann-Whitney U) test with midranks.
///
/// When both samples have at most [`EXACT_MAX_SAMPLE`] observations the
/// p-value is the exact permutation probability of a rank sum at least as
/// far from its mean as the observed one, computed over the observed
/// (possibly tied) midranks. Larger samples use the tie-corrected normal
/// approximation with a 0.5 continuity correction.
pub fn rank_sum_test(sample_a: &[f64], sample_b: &[f64]) -> Result<RankSumResult, MetricsError> {
    let (n, m) = (sample_a.len(), sample_b.len());
    if n < 3 || m < 3 {
        return Err(MetricsError::SampleTooSmall(n, m));
    }
    if sample_a.iter().chain(sample_b).any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let total = n + m;
    let mut pooled: Vec<(f64, bool)> = sample_a
        .iter()
        .map(|&x| (x, true))
        .chain(sample_b.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Doubled midranks keep every rank sum an integer.
    let mut ranks2 = vec![0u64; total];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        ranks2[i..=j].fill(r2);
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let sum2_a: u64 = pooled
        .iter()
        .zip(&ranks2)
        .filter(|((_, in_a), _)| *in_a)
        .map(|(_, r)| *r)
        .sum();
    let u = sum2_a as f64 / 2.0 - (n * (n + 1)) as f64 / 2.0;

    if pooled[0].0 == pooled[total - 1].0 {
        return Ok(RankSumResult {
            u,
            p_value: 1.0,
            method: PValueMethod::Degenerate,
        });
    }

    if n <= EXACT_MAX_SAMPLE && m <= EXACT_MAX_SAMPLE {
        let p_value = exact_two_sided(&ranks2, n, sum2_a);
        return Ok(RankSumResult {
            u,
            p_value,
            method: PValueMethod::Exact,
        });
    }

    let (nf, mf, tf) = (n as f64, m as f64, total as f64);
    let mean = nf * mf / 2.0;
    let var = nf * mf / 12.0 * ((tf + 1.0) - tie_sum / (tf * (tf - 1.0)));
    let dev = ((u - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let p_value = libm::erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(RankSumResult {
        u,
        p_value,
        method: PValueMethod::Normal,
    })
}

/// Fraction of size-`n` subsets of the doubled ranks whose sum deviates
/// from the null mean by at least the observed deviation.
fn exact_two_sided(ranks2: &[u64], n: usize, observed: u64) -> f64 {
    let max_sum: u64 = ranks2.iter().sum();
    let width = max_sum as usize + 1;
    // counts[k][s]: subsets of size k with doubled rank sum s.
    let mut counts = vec![vec![0.0f64; width]; n + 1];
    counts[0][0] = 1.0;
    for &r in ranks2 {
        let r = r as usize;
        for k in (1..=n).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..width).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // Twice the mean doubled rank sum: 2 * n * (N + 1).
    let twice_mean = (2 * n * (ranks2.len() + 1)) as i64;
    let obs_dev = (2 * observed as i64 - twice_mean).abs();
    let mut extreme = 0.0;
    let mut all = 0.0;
    for (s, &c) in counts[n].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        all += c;
        if (2 * s as i64 - twice_mean).abs() >= obs_dev {
            extreme += c;
        }
    }
    (extreme / all).min(1.0)
}

/// Linear-interpolation quantile (numpy's default) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}
