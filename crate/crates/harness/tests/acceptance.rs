//! Acceptance criteria 1-9, run sequentially in one test so that the
//! throughput measurements do not compete with other tests for cores.
//!
//! Every criterion prints one `criterion N: PASS|FAIL ...` line to stderr.
//! Correctness criteria (4-9) fail the test when red. The empirical
//! criteria (1-3) depend on stochastic search outcomes and on the host's
//! core count; they are reported but only fail the test when
//! `QD_ACCEPTANCE_STRICT=1` is set.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use qd_core::archive::{Archive, Candidate, GridTessellation};
use qd_core::mapelites::{run, RunConfig};
use qd_core::metrics::{rank_sum_test, PValueMethod};
use qd_core::parallel::{available_workers, Executor};
use qd_core::rng::RngState;
use qd_core::tasks::{PointNavConfig, Rastrigin, Sphere, TaskSpec};
use qd_core::variation::{iso_line, IsoLineParams};
use qd_harness::experiments::{run_ablation, run_throughput, AblationSpec, SweepReport, ThroughputSpec};
use qd_harness::output::{metrics_csv, RunMeta};
use qd_harness::Settings;

const SIGNIFICANCE: f64 = 0.05;
const BENCHMARK_DIMS: usize = 100;
const BUDGET: usize = 102_400;
const ABLATION_BATCHES: [usize; 4] = [64, 256, 1024, 4096];
const REPLICATIONS: usize = 5;
const ITERATION_COLLAPSE: usize = 64;
const THROUGHPUT_ITERATIONS: usize = 100;
const BATCH_SCALING_MIN: f64 = 4.0;
const WORKER_SCALING_MIN: f64 = 2.0;
const ORACLE_BATCHES: usize = 1000;
const ORACLE_MAX_BATCH: usize = 512;
const OPERATOR_SAMPLES: usize = 100_000;
const MEAN_TOL: f64 = 0.01;
const VAR_TOL: f64 = 0.05;
const FORMULA_TOL: f64 = 1e-9;
const RANK_SUM_TOL: f64 = 1e-9;
const RANK_SUM_MAX_N: usize = 6;

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    // Bypass libtest output capture so the lines always reach the log.
    let line = format!(
        "criterion {}: {} {}\n",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("qd-acceptance-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

/// splitmix64, independent of the library's generator.
struct TestRng(u64);

impl TestRng {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }
}

// ---------------------------------------------------------------- 1, 2

struct Sweep {
    task: &'static str,
    report: SweepReport,
    dir: PathBuf,
}

fn sweep(task: &'static str) -> Sweep {
    let dir = scratch(&format!("ablation-{task}"));
    let settings = Settings {
        task: Some(task.into()),
        dims: Some(BENCHMARK_DIMS),
        grid_shape: Some(vec![100, 100]),
        budget: Some(BUDGET),
        batch_sizes: Some(ABLATION_BATCHES.to_vec()),
        replications: Some(REPLICATIONS),
        seed: Some(0),
        workers: Some(available_workers()),
        ..Default::default()
    };
    let spec = AblationSpec::from_settings(&settings).unwrap();
    let report = run_ablation(&spec, &dir, |_| {}).unwrap();
    Sweep { task, report, dir }
}

fn criterion_1(sweeps: &[Sweep]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in sweeps {
        let r = &s.report;
        let mut disjoint = Vec::new();
        for (i, a) in r.per_batch.iter().enumerate() {
            for b in &r.per_batch[i + 1..] {
                if a.q3_qd_score < b.q1_qd_score || b.q3_qd_score < a.q1_qd_score {
                    disjoint.push(format!("{}/{}", a.batch_size, b.batch_size));
                }
            }
        }
        let min_p = r.comparisons.iter().map(|c| c.p_corrected).fold(1.0, f64::min);
        let significant: Vec<String> = r
            .comparisons
            .iter()
            .filter(|c| c.p_corrected <= SIGNIFICANCE)
            .map(|c| format!("{}/{}", c.batch_a, c.batch_b))
            .collect();
        let ok = r.failures.is_empty()
            && r.per_batch.len() == ABLATION_BATCHES.len()
            && r.comparisons.len() == ABLATION_BATCHES.len() * (ABLATION_BATCHES.len() - 1) / 2
            && disjoint.is_empty()
            && significant.is_empty();
        pass &= ok;
        let medians: Vec<String> = r
            .per_batch
            .iter()
            .map(|b| format!("{}:{:.4e}", b.batch_size, b.median_qd_score))
            .collect();
        parts.push(format!(
            "{} [{}] medians {} min corrected p {:.4}; disjoint IQRs [{}]; significant [{}]",
            s.task,
            if ok { "ok" } else { "red" },
            medians.join(" "),
            min_p,
            disjoint.join(" "),
            significant.join(" ")
        ));
    }
    Verdict {
        id: 1,
        pass,
        detail: parts.join(" | "),
    }
}

fn criterion_2(sweeps: &[Sweep], criterion_1_pass: bool) -> Verdict {
    let smallest = ABLATION_BATCHES[0];
    let largest = *ABLATION_BATCHES.last().unwrap();
    let mut collapse = true;
    let mut parts = Vec::new();
    for s in sweeps {
        let iterations = |bs: usize| -> Vec<usize> {
            (0..REPLICATIONS)
                .map(|rep| {
                    let p = s.dir.join(format!("runs/bs{bs}/rep{rep}/meta.json"));
                    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
                    meta.iterations
                })
                .collect()
        };
        let small = *iterations(smallest).iter().min().unwrap();
        let large = *iterations(largest).iter().max().unwrap();
        collapse &= large * ITERATION_COLLAPSE <= small;
        parts.push(format!("{}: {} vs {} iterations", s.task, large, small));
    }
    Verdict {
        id: 2,
        pass: collapse && criterion_1_pass,
        detail: format!(
            "{}; iteration ratio {}; criterion 1 {}",
            parts.join(", "),
            if collapse { "ok" } else { "red" },
            if criterion_1_pass { "ok" } else { "red" }
        ),
    }
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> (Verdict, bool) {
    let cores = available_workers();
    let settings = Settings {
        task: Some("point_nav".into()),
        iterations: Some(THROUGHPUT_ITERATIONS),
        workers: Some(cores),
        seed: Some(0),
        ..Default::default()
    };
    let spec = ThroughputSpec::from_settings(&settings, &[1]).unwrap();
    let points = run_throughput(&spec, |_| {});
    let failed = points.iter().any(|p| p.error.is_some());
    let at = |bs: usize, w: usize| {
        points
            .iter()
            .find(|p| p.batch_size == bs && p.workers == w)
            .map(|p| p.evals_per_second)
            .unwrap_or(0.0)
    };
    let ladder: Vec<(usize, f64)> = spec.batch_sizes.iter().map(|&b| (b, at(b, cores))).collect();
    let base = ladder[0].1;
    let (peak_batch, peak) = ladder.iter().copied().fold((0, 0.0), |m, x| if x.1 > m.1 { x } else { m });
    let batch_ratio = peak / base;
    let largest = *spec.batch_sizes.last().unwrap();
    let worker_ratio = at(largest, cores) / at(largest, 1);
    let pass = !failed && batch_ratio >= BATCH_SCALING_MIN && worker_ratio >= WORKER_SCALING_MIN;
    let shape: Vec<String> = ladder.iter().map(|(b, e)| format!("{b}:{e:.0}")).collect();
    let v = Verdict {
        id: 3,
        pass,
        detail: format!(
            "cores {cores}; eval/s {}; peak/base {batch_ratio:.2} at {peak_batch} (need {BATCH_SCALING_MIN}); \
             workers {cores}/1 at {largest}: {worker_ratio:.2} (need {WORKER_SCALING_MIN})",
            shape.join(" ")
        ),
    };
    (v, points.iter().all(|p| p.monotone))
}

// ---------------------------------------------------------------- 4

const ORACLE_SIDE: usize = 16;

#[derive(Default)]
struct SequentialOracle {
    cells: BTreeMap<usize, (f64, Vec<f64>, Vec<f64>)>,
}

impl SequentialOracle {
    fn insert(&mut self, c: &Candidate) {
        if c.dead {
            return;
        }
        let idx = |x: f64| ((x * ORACLE_SIDE as f64).floor().max(0.0) as usize).min(ORACLE_SIDE - 1);
        let cell = idx(c.descriptor[0]) * ORACLE_SIDE + idx(c.descriptor[1]);
        if self.cells.get(&cell).is_none_or(|(f, _, _)| c.fitness > *f) {
            self.cells.insert(cell, (c.fitness, c.descriptor.clone(), c.genotype.clone()));
        }
    }
}

fn criterion_4() -> Verdict {
    let mut rng = TestRng(4);
    let tess = GridTessellation::uniform(0.0, 1.0, vec![ORACLE_SIDE, ORACLE_SIDE]).unwrap();
    let mut archive = Archive::new(tess, 3);
    let mut oracle = SequentialOracle::default();
    let mut mismatch = None;
    let mut collisions = 0usize;
    for batch_no in 0..ORACLE_BATCHES {
        let size = 1 + rng.below(ORACLE_MAX_BATCH);
        // A handful of hot cells per batch guarantees intra-batch collisions.
        let hot: Vec<(usize, usize)> = (0..1 + rng.below(8))
            .map(|_| (rng.below(ORACLE_SIDE), rng.below(ORACLE_SIDE)))
            .collect();
        let batch: Vec<Candidate> = (0..size)
            .map(|_| {
                let (cx, cy) = if rng.below(4) == 0 {
                    (rng.below(ORACLE_SIDE), rng.below(ORACLE_SIDE))
                } else {
                    hot[rng.below(hot.len())]
                };
                let d = vec![
                    (cx as f64 + rng.unit()) / ORACLE_SIDE as f64,
                    (cy as f64 + rng.unit()) / ORACLE_SIDE as f64,
                ];
                // Coarse fitness levels force ties against incumbents and within the batch.
                let fitness = rng.below(16) as f64 - 8.0;
                Candidate {
                    genotype: vec![rng.unit(), rng.unit(), batch_no as f64],
                    fitness,
                    descriptor: d,
                    dead: rng.below(10) == 0,
                }
            })
            .collect();
        let mut seen = std::collections::HashSet::new();
        for c in &batch {
            let cell = archive.tessellation().cell_index(&c.descriptor).unwrap();
            if !seen.insert(cell) {
                collisions += 1;
            }
        }
        archive.batched_add(&batch).unwrap();
        for c in &batch {
            oracle.insert(c);
        }
        let got: BTreeMap<usize, (f64, Vec<f64>, Vec<f64>)> = archive
            .filled_indices()
            .into_iter()
            .map(|c| {
                (
                    c,
                    (
                        archive.fitness(c).unwrap(),
                        archive.descriptor(c).unwrap().to_vec(),
                        archive.genotype(c).unwrap().to_vec(),
                    ),
                )
            })
            .collect();
        if got != oracle.cells {
            mismatch = Some(batch_no);
            break;
        }
    }
    Verdict {
        id: 4,
        pass: mismatch.is_none(),
        detail: match mismatch {
            None => format!(
                "{ORACLE_BATCHES} batches of 1..={ORACLE_MAX_BATCH}, {collisions} intra-batch collisions, \
                 {} cells filled, identical to sequential insertion",
                archive.filled_count()
            ),
            Some(b) => format!("archive diverged from sequential insertion at batch {b}"),
        },
    }
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let parent1 = vec![0.3, 0.5, -2.0, 4.0, 0.0];
    let parent2 = vec![0.9, 0.5, 1.0, 3.5, -0.25];
    let params = IsoLineParams::new(IsoLineParams::DEFAULT_SIGMA1, IsoLineParams::DEFAULT_SIGMA2, None).unwrap();
    let p1 = vec![parent1.clone(); OPERATOR_SAMPLES];
    let p2 = vec![parent2.clone(); OPERATOR_SAMPLES];
    let children = iso_line(&p1, &p2, &params, RngState::new(55), &Executor::serial()).unwrap();
    let n = OPERATOR_SAMPLES as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for i in 0..parent1.len() {
        let mean = children.iter().map(|c| c[i]).sum::<f64>() / n;
        let var = children.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let delta: f64 = parent2[i] - parent1[i];
        let expected = params.sigma1.powi(2) + params.sigma2.powi(2) * delta.powi(2);
        let scale = parent1[i].abs().max(1.0);
        worst_mean = worst_mean.max((mean - parent1[i]).abs() / scale);
        worst_var = worst_var.max((var - expected).abs() / expected);
    }
    Verdict {
        id: 5,
        pass: worst_mean <= MEAN_TOL && worst_var <= VAR_TOL,
        detail: format!(
            "{OPERATOR_SAMPLES} samples: worst relative mean error {worst_mean:.2e} (tol {MEAN_TOL}), \
             worst relative variance error {worst_var:.2e} (tol {VAR_TOL})"
        ),
    }
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Verdict {
    let zeros = vec![0.0; BENCHMARK_DIMS];
    let ones = vec![1.0; BENCHMARK_DIMS];
    let r0 = Rastrigin::fitness(&zeros);
    let s0 = Sphere::fitness(&zeros);
    let r_half = Rastrigin::fitness(&[0.5, 0.5]);
    let s1 = Sphere::fitness(&ones);
    let pass = r0 == 0.0 && s0 == 0.0 && (r_half + 40.5).abs() <= FORMULA_TOL && (s1 + 100.0).abs() <= FORMULA_TOL;
    Verdict {
        id: 6,
        pass,
        detail: format!("rastrigin(0)={r0} sphere(0)={s0} rastrigin(0.5,0.5)={r_half} sphere(1,N=100)={s1}"),
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> (Verdict, bool) {
    let mut configs = vec![RunConfig::for_task(TaskSpec::Sphere { dims: BENCHMARK_DIMS })];
    configs.push(RunConfig {
        budget: 8192,
        batch_size: 512,
        init_batch_size: 512,
        ..RunConfig::for_task(TaskSpec::Rastrigin { dims: BENCHMARK_DIMS })
    });
    configs.push(RunConfig {
        budget: 4096,
        batch_size: 256,
        init_batch_size: 256,
        grid_shape: vec![32, 32],
        ..RunConfig::for_task(TaskSpec::PointNav(PointNavConfig::default()))
    });
    let mut pass = true;
    let mut monotone = true;
    let mut parts = Vec::new();
    for base in configs {
        let mut outputs = Vec::new();
        for workers in [1, 2, 8] {
            let config = RunConfig {
                seed: 31,
                workers,
                ..base.clone()
            };
            let result = run(&config).unwrap();
            monotone &= result
                .trace
                .windows(2)
                .all(|w| w[1].qd_score >= w[0].qd_score && w[1].coverage >= w[0].coverage);
            outputs.push((metrics_csv(&result.trace), result.archive.to_csv()));
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        pass &= same;
        parts.push(format!(
            "{} {}",
            base.task.name(),
            if same { "identical" } else { "DIFFERS" }
        ));
    }
    (
        Verdict {
            id: 7,
            pass,
            detail: format!("workers 1/2/8, metrics.csv and archive.csv: {}", parts.join(", ")),
        },
        monotone,
    )
}

// ---------------------------------------------------------------- 8

fn pair_count_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Exact two-sided p over every assignment of the pooled values to the
/// first sample, measured by distance of U from its null mean.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = a.len();
    let centre = (a.len() * b.len()) as f64 / 2.0;
    let observed = (pair_count_u(a, b) - centre).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << pooled.len()) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                xa.push(v);
            } else {
                xb.push(v);
            }
        }
        total += 1;
        if (pair_count_u(&xa, &xb) - centre).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn criterion_8() -> Verdict {
    let mut rng = TestRng(8);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut problems = Vec::new();
    for n in 1..=RANK_SUM_MAX_N {
        for m in 1..=RANK_SUM_MAX_N {
            if n < 3 || m < 3 {
                if rank_sum_test(&vec![1.0; n], &vec![2.0; m]).is_ok() {
                    problems.push(format!("{n}x{m} accepted"));
                }
                continue;
            }
            for trial in 0..20 {
                // Small integer supports produce ties; trial 0 is fully separated.
                let levels = if trial % 2 == 0 { 1000 } else { 4 };
                let draw = |rng: &mut TestRng, k: usize, shift: usize| -> Vec<f64> {
                    (0..k)
                        .map(|_| if trial == 0 { shift as f64 } else { rng.below(levels) as f64 })
                        .collect()
                };
                let mut a = draw(&mut rng, n, 0);
                let b = draw(&mut rng, m, 1);
                if trial == 0 {
                    for (i, x) in a.iter_mut().enumerate() {
                        *x -= i as f64;
                    }
                }
                let r = rank_sum_test(&a, &b).unwrap();
                if (r.u - pair_count_u(&a, &b)).abs() > RANK_SUM_TOL {
                    problems.push(format!("{n}x{m} U {}", r.u));
                }
                match r.method {
                    PValueMethod::Exact => {}
                    PValueMethod::Degenerate if r.p_value == 1.0 => {}
                    other => problems.push(format!("{n}x{m} used {other:?}")),
                }
                worst = worst.max((r.p_value - enumeration_p(&a, &b)).abs());
                cases += 1;
            }
        }
    }
    let pass = problems.is_empty() && worst <= RANK_SUM_TOL;
    Verdict {
        id: 8,
        pass,
        detail: format!(
            "{cases} cases over n,m in 3..={RANK_SUM_MAX_N} (smaller sizes rejected): max |p - enumeration| {worst:.1e} \
             (tol {RANK_SUM_TOL}){}",
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join(", "))
            }
        ),
    }
}

// ---------------------------------------------------------------- 9

fn criterion_9(sweeps: &[Sweep], throughput_monotone: bool, determinism_monotone: bool) -> Verdict {
    let mut runs = 0;
    let mut bad = Vec::new();
    for s in sweeps {
        for r in &s.report.runs {
            runs += 1;
            if !r.monotone {
                bad.push(format!("{} bs{} rep{}", s.task, r.batch_size, r.replication));
            }
        }
    }
    if !throughput_monotone {
        bad.push("throughput sweep".into());
    }
    if !determinism_monotone {
        bad.push("determinism runs".into());
    }
    Verdict {
        id: 9,
        pass: bad.is_empty(),
        detail: format!(
            "{runs} ablation runs plus throughput and determinism runs: {}",
            if bad.is_empty() {
                "QD-score and coverage non-decreasing everywhere".to_string()
            } else {
                format!("decreasing trace in {}", bad.join(", "))
            }
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let strict = std::env::var("QD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let sweeps = vec![sweep("sphere"), sweep("rastrigin")];
    let c1 = criterion_1(&sweeps);
    let c2 = criterion_2(&sweeps, c1.pass);
    let (c3, throughput_monotone) = criterion_3();
    let c4 = criterion_4();
    let c5 = criterion_5();
    let c6 = criterion_6();
    let (c7, determinism_monotone) = criterion_7();
    let c8 = criterion_8();
    let c9 = criterion_9(&sweeps, throughput_monotone, determinism_monotone);
    for s in &sweeps {
        let _ = fs::remove_dir_all(&s.dir);
    }

    let verdicts = [c1, c2, c3, c4, c5, c6, c7, c8, c9];
    for v in &verdicts {
        report(v);
    }
    let blocking: Vec<u8> = verdicts
        .iter()
        .filter(|v| !v.pass && (strict || v.id >= 4))
        .map(|v| v.id)
        .collect();
    assert!(blocking.is_empty(), "acceptance criteria failed: {blocking:?}");
}
