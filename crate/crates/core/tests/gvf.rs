use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triq::gvf::{
    greedy_rollout, ground_truth_values, split_dataset, td_target, td_train, value_table, EnvKind, GridEnv, GvfHead, SplitMode,
    TdConfig, ValueArch, ValueTable, HORIZON,
};
use triq::metrics::DistanceModel;

fn tiny_arch() -> ValueArch {
    ValueArch { filters: vec![4, 4], hidden: 16, embed_dim: 8, head_width: 8, head_layers: 2, wide_components: 4, pieces: 3 }
}

fn tiny_td(epochs: usize) -> TdConfig {
    TdConfig { epochs, batch_size: 256, lr: 1e-3, eval_every: 0, ..TdConfig::default() }
}

fn train_tiny(env: &GridEnv, head: GvfHead, epochs: usize, mut check: impl FnMut(&ValueTable)) -> DistanceModel {
    let spec = tiny_arch().spec(head, env.is_asymmetric());
    let mut model = DistanceModel::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let split = split_dataset(env, SplitMode::Goal, 1.0).unwrap();
    td_train(env, &mut model, &split.train, &tiny_td(epochs), &mut ChaCha8Rng::seed_from_u64(2), |_, _, m| {
        check(&value_table(env, m)?);
        Ok(())
    })
    .unwrap();
    model
}

#[test]
fn optimal_values_satisfy_the_bellman_equation() {
    for (kind, asymmetric) in [(EnvKind::FourRoom, false), (EnvKind::Maze, false), (EnvKind::FourRoom, true), (EnvKind::Maze, true)] {
        let env = GridEnv::build(kind, asymmetric, 4).unwrap();
        let truth = ground_truth_values(&env).unwrap();
        for s in 0..env.states() {
            assert_eq!(truth.get(s, s), 0.0);
            for g in (0..env.states()).filter(|&g| g != s) {
                let target = td_target(&env, &truth, s, g);
                assert!((target - truth.get(s, g)).abs() < 1e-9, "{kind} ({s}, {g})");
            }
        }
    }
}

#[test]
fn optimal_values_roll_out_with_unit_spl() {
    for kind in [EnvKind::FourRoom, EnvKind::Maze] {
        let env = GridEnv::build(kind, true, 5).unwrap();
        let truth = ground_truth_values(&env).unwrap();
        for s in 0..env.states() {
            for g in (0..env.states()).filter(|&g| g != s) {
                let r = greedy_rollout(&env, &truth, s, g, HORIZON);
                assert!(r.reached, "{kind} ({s}, {g})");
                assert!((r.spl(-truth.get(s, g)) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn metric_heads_keep_zero_self_value_during_training() {
    let env = GridEnv::build(EnvKind::FourRoom, true, 3).unwrap();
    for head in [GvfHead::DeepNorm, GvfHead::WideNorm, GvfHead::Euclidean] {
        let mut epochs = 0;
        train_tiny(&env, head, 3, |v| {
            epochs += 1;
            assert!((0..env.states()).all(|s| v.get(s, s) == 0.0), "{}", head.name());
        });
        assert_eq!(epochs, 3);
    }
}

#[test]
fn negated_values_form_a_quasi_metric() {
    let env = GridEnv::build(EnvKind::Maze, true, 3).unwrap();
    for head in [GvfHead::DeepNorm, GvfHead::WideNorm] {
        let model = train_tiny(&env, head, 3, |_| {});
        let v = value_table(&env, &model).unwrap();
        let d = |a: usize, b: usize| -v.get(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = env.states();
        for _ in 0..20_000 {
            let (s, m, g) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
            let bound = d(s, m) + d(m, g);
            assert!(d(s, g) <= bound + 1e-9 * bound.max(1.0), "{}: ({s}, {m}, {g})", head.name());
        }
    }
}

#[test]
fn euclidean_head_is_symmetric() {
    let env = GridEnv::build(EnvKind::FourRoom, true, 3).unwrap();
    let model = train_tiny(&env, GvfHead::Euclidean, 2, |_| {});
    let v = value_table(&env, &model).unwrap();
    for s in 0..env.states() {
        for g in 0..env.states() {
            assert_eq!(v.get(s, g), v.get(g, s));
        }
    }
}
