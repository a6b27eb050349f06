use proptest::prelude::*;
use qd_core::parallel::Executor;
use qd_core::rng::RngState;
use qd_core::tasks::{
    evaluate_batch, DenseLayer, MlpPolicy, PointNav, PointNavConfig, Rastrigin, ScoringFunction, Sphere,
};

/// Reference forward pass over explicit `[out][in]` matrices.
fn matrix_forward(layers: &[(Vec<Vec<f64>>, Vec<f64>)], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for (w, b) in layers {
        let mut y = vec![0.0; b.len()];
        for o in 0..b.len() {
            let mut acc = b[o];
            for i in 0..x.len() {
                acc += w[o][i] * x[i];
            }
            y[o] = acc.tanh();
        }
        x = y;
    }
    x
}

fn random_layers(sizes: &[usize], seed: u64) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut s = RngState::new(seed).stream(0);
    sizes
        .windows(2)
        .map(|w| {
            let m = (0..w[1]).map(|_| (0..w[0]).map(|_| s.uniform_range(-1.0, 1.0)).collect()).collect();
            let b = (0..w[1]).map(|_| s.uniform_range(-1.0, 1.0)).collect();
            (m, b)
        })
        .collect()
}

/// Row-major weights then biases, layer by layer.
fn pack(layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in layers {
        for row in w {
            v.extend(row);
        }
        v.extend(b);
    }
    v
}

#[test]
fn mlp_forward_matches_matrix_oracle() {
    let sizes = [4, 8, 8, 2];
    let policy = MlpPolicy::new(sizes.to_vec()).unwrap();
    for seed in 0..20 {
        let layers = random_layers(&sizes, seed);
        let flat = pack(&layers);
        let obs = [0.3 * seed as f64 - 2.0, 0.1, -0.7, 1.9];
        let got = policy.forward(&flat, &obs).unwrap();
        let want = matrix_forward(&layers, &obs);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "seed {seed}: {g} vs {w}");
            assert!((-1.0..=1.0).contains(g));
        }
    }
}

proptest! {
    #[test]
    fn mlp_flatten_roundtrip(hidden in 1usize..10, seed in any::<u64>()) {
        let policy = MlpPolicy::new(vec![4, hidden, hidden, 2]).unwrap();
        let mut s = RngState::new(seed).stream(0);
        let flat: Vec<f64> = (0..policy.num_params()).map(|_| s.uniform_range(-5.0, 5.0)).collect();
        let layers: Vec<DenseLayer> = policy.unflatten(&flat).unwrap();
        prop_assert_eq!(policy.flatten(&layers), flat);
    }

    #[test]
    fn benchmarks_bounded_above_by_zero(theta in prop::collection::vec(0.0f64..=1.0, 2..40)) {
        let r = Rastrigin::fitness(&theta);
        let s = Sphere::fitness(&theta);
        prop_assert!(r <= 0.0);
        prop_assert!(s <= 0.0);
        if theta.iter().any(|&x| x != 0.0) {
            prop_assert!(r < 0.0);
            prop_assert!(s < 0.0);
        }
        let n = theta.len() as f64;
        prop_assert!(r + 20.25 * n >= 0.0);
        prop_assert!(s + n >= 0.0);
    }

    #[test]
    fn point_nav_bounds_and_purity(seed in any::<u64>()) {
        let task = PointNav::new(PointNavConfig::default()).unwrap();
        let mut s = RngState::new(seed).stream(0);
        let g: Vec<f64> = (0..task.genotype_len()).map(|_| s.uniform_range(-1.0, 1.0)).collect();
        let a = task.evaluate(&g).unwrap();
        let b = task.evaluate(&g).unwrap();
        prop_assert_eq!(&a, &b);
        let c = task.config();
        // Terminal speed under damping is dt / (1 - damping) per axis.
        let v_max = c.dt / (1.0 - c.damping);
        if !a.dead {
            prop_assert!(a.descriptor.iter().all(|d| d.abs() <= c.arena_half_width + c.dt * v_max));
        }
        prop_assert!(a.raw_fitness + task.fitness_offset() >= 0.0);
    }
}

/// Scripted straight-line rollout of a constant action `(ax, 0)`.
fn scripted_constant_thrust(cfg: &PointNavConfig, ax: f64) -> (f64, f64, Option<usize>) {
    let (mut x, mut v, mut reward) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..cfg.episode_len {
        let nv = cfg.damping * v + ax * cfg.dt;
        let nx = x + nv * cfg.dt;
        if nx.abs() > cfg.arena_half_width {
            return (x, reward, Some(t));
        }
        x = nx;
        v = nv;
        reward += cfg.survival_reward - cfg.torque_cost * ax * ax;
    }
    (x, reward, None)
}

fn thrust_policy(task: &PointNav, bias: f64) -> Vec<f64> {
    let n = task.genotype_len();
    let mut g = vec![0.0; n];
    // Output layer biases are the final two parameters.
    g[n - 2] = bias;
    g
}

#[test]
fn constant_thrust_matches_scripted_rollout() {
    for (half_width, bias) in [(1.0, 0.8), (100.0, 0.8), (1.0, 0.05), (0.5, 2.0)] {
        let cfg = PointNavConfig {
            arena_half_width: half_width,
            ..PointNavConfig::default()
        };
        let task = PointNav::new(cfg.clone()).unwrap();
        let e = task.evaluate(&thrust_policy(&task, bias)).unwrap();
        let (x, reward, fail) = scripted_constant_thrust(&cfg, bias.tanh());
        assert_eq!(e.fail_step, fail, "hw {half_width} bias {bias}");
        assert!((e.descriptor[0] - x).abs() < 1e-12);
        assert_eq!(e.descriptor[1], 0.0);
        assert!((e.raw_fitness - reward).abs() < 1e-9);
        assert!(!e.dead);
    }
}

#[test]
fn wall_hit_truncates_but_keeps_prefix() {
    let cfg = PointNavConfig::default();
    let task = PointNav::new(cfg.clone()).unwrap();
    let e = task.evaluate(&thrust_policy(&task, 3.0)).unwrap();
    let step = e.fail_step.expect("strong thrust should reach the wall");
    assert!(step > 0 && step < cfg.episode_len);
    assert!(!e.dead);
    assert!(e.descriptor[0] <= cfg.arena_half_width && e.descriptor[0] > 0.5);
    assert!(e.raw_fitness < cfg.episode_len as f64 * cfg.survival_reward);
}

#[test]
fn sphere_batch_matches_serial_loop() {
    let task = Sphere { dims: 100 };
    let genotypes: Vec<Vec<f64>> = (0..4096)
        .map(|j| {
            let mut s = RngState::new(99).stream(j);
            (0..100).map(|_| s.uniform()).collect()
        })
        .collect();
    let batch = evaluate_batch(&task, &genotypes, &Executor::new(4).unwrap()).unwrap();
    let mut got: Vec<f64> = batch.evaluations.iter().map(|e| e.raw_fitness).collect();
    let mut want: Vec<f64> = genotypes.iter().map(|g| -g.iter().map(|x| x * x).sum::<f64>()).collect();
    got.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    assert_eq!(got, want);
}

#[test]
fn point_nav_batch_is_worker_invariant() {
    let task = PointNav::new(PointNavConfig::default()).unwrap();
    let genotypes: Vec<Vec<f64>> = (0..256)
        .map(|j| {
            let mut s = RngState::new(5).stream(j);
            (0..task.genotype_len()).map(|_| s.uniform_range(-1.0, 1.0)).collect()
        })
        .collect();
    let one = evaluate_batch(&task, &genotypes, &Executor::serial()).unwrap();
    let four = evaluate_batch(&task, &genotypes, &Executor::new(4).unwrap()).unwrap();
    assert_eq!(one.evaluations, four.evaluations);
}
