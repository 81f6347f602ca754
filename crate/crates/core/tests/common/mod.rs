//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use triq::diffcore::{finite_diff_check, Constraint, ParamStore, Tape, Tensor};
use triq::metrics::{DistanceMatrix, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode};
use triq::norms::{
    make_definite, symmetrize, Activation, DeepNormSpec, HeadSpec, IcnnSpec, MlpSpec, NeuralMetricSpec, NormModel, Pooling,
    WideNormSpec,
};

pub const FD_POINTS: usize = 100;
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Every head family with small widths, including the wrappers and baselines.
pub fn gradient_heads(dim: usize) -> Vec<(&'static str, HeadSpec)> {
    let deep = |activation, pooling| HeadSpec::DeepNorm(DeepNormSpec { input_dim: dim, widths: vec![6, 6], activation, pooling });
    let wide = |asymmetric, pooling| {
        HeadSpec::WideNorm(WideNormSpec { input_dim: dim, components: 4, component_dim: 3, asymmetric, pooling })
    };
    let neural = |base| HeadSpec::NeuralMetric(NeuralMetricSpec { base: Box::new(base), pieces: 3, pooling: Pooling::MaxMean });
    vec![
        ("deepnorm_relu_mean", deep(Activation::Relu, Pooling::Mean)),
        ("deepnorm_maxrelu_maxmean", deep(Activation::MaxRelu, Pooling::MaxMean)),
        ("deepnorm_relu_max", deep(Activation::Relu, Pooling::Max)),
        ("widenorm_maxmean", wide(false, Pooling::MaxMean)),
        ("widenorm_asym_mean", wide(true, Pooling::Mean)),
        ("nm_deepnorm", neural(deep(Activation::MaxRelu, Pooling::Mean))),
        ("nm_widenorm_asym", neural(wide(true, Pooling::Mean))),
        ("symmetrized_deepnorm", symmetrize(deep(Activation::Relu, Pooling::Mean))),
        ("definite_widenorm", make_definite(wide(true, Pooling::MaxMean), 0.3).unwrap()),
        ("mahalanobis", HeadSpec::Mahalanobis { input_dim: dim, rows: 3 }),
        ("euclidean", HeadSpec::Euclidean { input_dim: dim }),
        ("mlp", HeadSpec::Mlp(MlpSpec { input_dim: dim, widths: vec![6, 6] })),
        ("icnn", HeadSpec::Icnn(IcnnSpec { input_dim: dim, widths: vec![6, 6] })),
    ]
}

/// Worst finite-difference error of each head over `FD_POINTS` random
/// initializations, with the input point as an extra parameter.
pub fn head_gradient_errors() -> Vec<(&'static str, f64)> {
    let dim = 4;
    gradient_heads(dim)
        .into_iter()
        .map(|(name, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut worst: f64 = 0.0;
            for _ in 0..FD_POINTS {
                let model = NormModel::new(spec.clone(), &mut rng).unwrap();
                let mut store: ParamStore = model.params().clone();
                let x = store.add("input", Tensor::row(&gaussian(&mut rng, dim)), Constraint::None);
                let head = model.head().clone();
                let program = move |t: &mut Tape, p: &ParamStore| {
                    let z = t.param(p, x);
                    head.forward(t, p, z)
                };
                worst = worst.max(finite_diff_check(&program, &store, FD_STEP).unwrap());
            }
            (name, worst)
        })
        .collect()
}

/// Same check through each embedding family feeding a head.
pub fn embedding_gradient_errors() -> Vec<(&'static str, f64)> {
    let head = |dim| {
        HeadSpec::WideNorm(WideNormSpec { input_dim: dim, components: 3, component_dim: 2, asymmetric: true, pooling: Pooling::MaxMean })
    };
    let embeddings = [
        ("table", EmbeddingSpec::Table { count: 5, dim: 3 }, PairMode::Metric),
        ("dense", EmbeddingSpec::Dense { input_dim: 4, depth: 2, width: 5, output_dim: 3 }, PairMode::Metric),
        (
            "conv",
            EmbeddingSpec::Conv { height: 4, width: 3, channels: 2, filters: vec![2, 3], hidden: 5, output_dim: 3 },
            PairMode::Metric,
        ),
        ("raw_pair_mlp", EmbeddingSpec::Dense { input_dim: 4, depth: 1, width: 5, output_dim: 3 }, PairMode::RawPair),
    ];
    embeddings
        .into_iter()
        .map(|(name, embedding, mode)| {
            let e = embedding.output_dim();
            let head = match mode {
                PairMode::Metric => head(e),
                PairMode::RawPair => HeadSpec::Mlp(MlpSpec { input_dim: 2 * e, widths: vec![4] }),
            };
            let spec = DistanceSpec { embedding: embedding.clone(), head, mode };
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut worst: f64 = 0.0;
            for _ in 0..FD_POINTS {
                let model = DistanceModel::new(spec.clone(), &mut rng).unwrap();
                let d = embedding.input_dim();
                let (xs, ys) = match &embedding {
                    EmbeddingSpec::Table { count, .. } => {
                        let a = rng.random_range(0..*count) as f64;
                        let b = rng.random_range(0..*count) as f64;
                        (Tensor::row(&[a]), Tensor::row(&[b]))
                    }
                    _ => (Tensor::row(&gaussian(&mut rng, d)), Tensor::row(&gaussian(&mut rng, d))),
                };
                let m = model.clone();
                let program = move |t: &mut Tape, p: &ParamStore| {
                    let (x, y) = (t.input(xs.clone()), t.input(ys.clone()));
                    let ex = m.embedding().apply(t, p, x).map_err(unwrap_diff)?;
                    let ey = m.embedding().apply(t, p, y).map_err(unwrap_diff)?;
                    let z = match m.spec().mode {
                        PairMode::Metric => t.sub(ey, ex)?,
                        PairMode::RawPair => t.concat(ex, ey)?,
                    };
                    m.head().forward(t, p, z)
                };
                worst = worst.max(finite_diff_check(&program, model.params(), FD_STEP).unwrap());
            }
            (name, worst)
        })
        .collect()
}

fn unwrap_diff(e: triq::Error) -> triq::diffcore::DiffError {
    match e {
        triq::Error::Diff(d) => d,
        other => panic!("unexpected error {other}"),
    }
}

/// Exact metric nearness by active-set enumeration.
///
/// Minimizes `Σ (x − d)²` over the off-diagonal entries (one variable per
/// unordered pair when symmetric) subject to every triangle inequality and
/// `x ≥ 0`. Candidate active sets are tried in order of size; the first whose
/// equality-constrained solution is feasible with non-negative multipliers
/// satisfies KKT, and strict convexity makes it the optimum.
pub fn nearness_oracle(d: &DistanceMatrix, symmetric: bool) -> DistanceMatrix {
    let n = d.n();
    let mut var = vec![vec![usize::MAX; n]; n];
    let mut target = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            var[i][j] = target.len();
            target.push(d.get(i, j));
        }
    }
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                var[i][j] = var[j][i];
            }
        }
    }
    let m = target.len();
    // Each row is a sparse `a` with constraint `a·x ≤ 0`.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..n {
        for k in 0..n {
            if i == k || (symmetric && k < i) {
                continue;
            }
            for j in 0..n {
                if j != i && j != k {
                    rows.push(vec![(var[i][k], 1.0), (var[i][j], -1.0), (var[j][k], -1.0)]);
                }
            }
        }
    }
    for v in 0..m {
        rows.push(vec![(v, -1.0)]);
    }
    let dense = |r: &[(usize, f64)]| {
        let mut a = vec![0.0; m];
        for &(v, c) in r {
            a[v] += c;
        }
        a
    };
    let a: Vec<Vec<f64>> = rows.iter().map(|r| dense(r)).collect();
    let dvec = DVector::from_vec(target.clone());
    let feasible = |x: &DVector<f64>| a.iter().all(|row| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= 1e-11);

    let mut solution = None;
    'sizes: for size in 0..=m {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            if let Some(x) = try_active_set(&a, &combo, &dvec) {
                if feasible(&x) {
                    solution = Some(x);
                    break 'sizes;
                }
            }
            if !next_combination(&mut combo, a.len()) {
                break;
            }
        }
    }
    let x = solution.expect("a strictly convex feasible QP has a KKT active set");
    let mut out = DistanceMatrix::zeros(n, symmetric);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.set(i, j, x[var[i][j]]);
            }
        }
    }
    out
}

/// Solves the equality-constrained projection for one active set; `None`
/// when the rows are dependent or a multiplier is negative.
fn try_active_set(a: &[Vec<f64>], active: &[usize], d: &DVector<f64>) -> Option<DVector<f64>> {
    if active.is_empty() {
        return Some(d.clone());
    }
    let m = d.len();
    let s = active.len();
    let aa = DMatrix::from_fn(s, m, |r, c| a[active[r]][c]);
    let gram = &aa * aa.transpose();
    let chol = gram.clone().cholesky()?;
    if chol.l().diagonal().min() < 1e-8 {
        return None;
    }
    let lambda = chol.solve(&(&aa * d));
    if lambda.iter().any(|&l| l < -1e-12) {
        return None;
    }
    Some(d - aa.transpose() * lambda)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Random non-negative instance with entries in `[0, 10)`.
pub fn random_instance(n: usize, symmetric: bool, rng: &mut ChaCha8Rng) -> DistanceMatrix {
    let mut d = DistanceMatrix::zeros(n, symmetric);
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            let v = rng.random_range(0.0..10.0);
            d.set(i, j, v);
            if symmetric {
                d.set(j, i, v);
            }
        }
    }
    d
}

pub fn max_abs_diff(a: &DistanceMatrix, b: &DistanceMatrix) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Symmetric Wide Norm with 32 components over 16-dimensional points.
pub fn pairwise_model(seed: u64) -> DistanceModel {
    let head = HeadSpec::WideNorm(WideNormSpec {
        input_dim: 16,
        components: 32,
        component_dim: 16,
        asymmetric: false,
        pooling: Pooling::MaxMean,
    });
    let spec = DistanceSpec { embedding: EmbeddingSpec::Identity { dim: 16 }, head, mode: PairMode::Metric };
    DistanceModel::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn random_points(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![n, dim], gaussian(rng, n * dim)).unwrap()
}

/// Largest fast-versus-naive difference on an `n × n` batch.
pub fn pairwise_gap(model: &DistanceModel, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys) = (random_points(n, 16, &mut rng), random_points(n, 16, &mut rng));
    let naive = triq::metrics::pairwise_naive(model, &xs, &ys).unwrap();
    let fast = triq::metrics::pairwise_widenorm_fast(model, &xs, &ys).unwrap();
    max_abs_diff(&naive, &fast)
}

/// Wall-clock seconds of the naive and fast paths on an `n × n` batch.
pub fn pairwise_times(model: &DistanceModel, n: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (xs, ys) = (random_points(n, 16, &mut rng), random_points(n, 16, &mut rng));
    let t = std::time::Instant::now();
    triq::metrics::pairwise_naive(model, &xs, &ys).unwrap();
    let naive = t.elapsed().as_secs_f64();
    let t = std::time::Instant::now();
    triq::metrics::pairwise_widenorm_fast(model, &xs, &ys).unwrap();
    (naive, t.elapsed().as_secs_f64())
}
