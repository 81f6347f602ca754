mod common;

use common::{pairwise_gap, pairwise_model, pairwise_times, random_points};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triq::metrics::{pairwise_widenorm_fast, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode};
use triq::norms::{HeadSpec, Pooling, WideNormSpec};

#[test]
fn fast_path_matches_naive_on_every_batch_size() {
    let model = pairwise_model(1);
    for n in [32, 64, 128, 512] {
        let gap = pairwise_gap(&model, n, n as u64);
        assert!(gap < 1e-5, "{n}×{n}: {gap:e}");
    }
}

#[test]
fn fast_path_is_faster_at_512() {
    let (naive, fast) = pairwise_times(&pairwise_model(2), 512);
    assert!(naive / fast > 1.0, "naive {naive:.3}s, fast {fast:.3}s");
}

#[test]
fn asymmetric_wide_norm_has_no_fast_path() {
    let head = HeadSpec::WideNorm(WideNormSpec { input_dim: 4, components: 3, component_dim: 2, asymmetric: true, pooling: Pooling::Mean });
    let spec = DistanceSpec { embedding: EmbeddingSpec::Identity { dim: 4 }, head, mode: PairMode::Metric };
    let model = DistanceModel::new(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let xs = random_points(5, 4, &mut ChaCha8Rng::seed_from_u64(4));
    assert!(pairwise_widenorm_fast(&model, &xs, &xs).is_err());
}
