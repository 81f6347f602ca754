//! Shortest-path regression on synthetic graphs with landmark node features.

mod build;
mod graph;

pub use build::{build_graph, sample_weight, taxi_nodes, GraphKind};
pub use graph::{shortest_paths, Graph};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{fit, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode, PairSet, Schedule};
use crate::norms::{Activation, DeepNormSpec, HeadSpec, MlpSpec, NeuralMetricSpec, Pooling, WideNormSpec};
use crate::seeds;

/// Noisy standardized landmark distances followed by Gaussian distractors.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    pub landmarks: Vec<usize>,
    /// `nodes × (landmark columns + distractors)`.
    pub values: Tensor,
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in 0..self.values.rows() {
            out.write_record(self.values.row_slice(r).iter().map(|v| format!("{v:.16e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Landmark columns are `d(v, l)` for each landmark, plus `d(l, v)` on
/// directed graphs; each column is standardized before noise is added.
pub fn landmark_features<R: Rng + ?Sized>(
    graph: &Graph,
    n_landmarks: usize,
    noise_sd: f64,
    n_distractors: usize,
    rng: &mut R,
) -> Result<NodeFeatures> {
    let n = graph.nodes();
    if n_landmarks == 0 || n_landmarks > n {
        return Err(Error::InvalidConfig(format!("need 1..={n} landmarks, got {n_landmarks}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sd must be non-negative, got {noise_sd}")));
    }
    let landmarks = index::sample(rng, n, n_landmarks).into_vec();
    // Dijkstra on the reversed graph from l gives d(v, l) for every v.
    let mut columns = graph.reversed().distances_from(&landmarks);
    if graph.is_directed() {
        columns.extend(graph.distances_from(&landmarks));
    }
    for (col, &l) in columns.iter_mut().zip(landmarks.iter().cycle()) {
        if let Some(v) = col.iter().position(|d| !d.is_finite()) {
            return Err(Error::Unreachable { from: v, to: l });
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for d in col.iter_mut() {
            *d = if sd > 0.0 { (*d - mean) / sd } else { 0.0 };
        }
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let dim = columns.len() + n_distractors;
    let mut data = Vec::with_capacity(n * dim);
    for v in 0..n {
        for col in &columns {
            data.push(col[v] + noise.sample(rng));
        }
        for _ in 0..n_distractors {
            data.push(StandardNormal.sample(rng));
        }
    }
    Ok(NodeFeatures { landmarks, values: Tensor::new(vec![n, dim], data)? })
}

/// Exact shortest-path lengths for sampled ordered pairs, rescaled to mean 50.
#[derive(Debug, Clone)]
pub struct PathDataset {
    pub features: NodeFeatures,
    pub train: PairSet,
    pub test: PairSet,
    /// Multiplier applied to raw path lengths.
    pub scale: f64,
}

pub const TARGET_MEAN: f64 = 50.0;

/// Distinct ordered pairs `u != v`, uniformly without replacement.
pub fn sample_pairs<R: Rng + ?Sized>(nodes: usize, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = nodes * nodes.saturating_sub(1);
    if count >= total / 2 {
        let mut all: Vec<_> = (0..nodes).flat_map(|u| (0..nodes).filter(move |&v| v != u).map(move |v| (u, v))).collect();
        all.shuffle(rng);
        all.truncate(count);
        return all;
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (u, v) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if u != v && seen.insert((u, v)) {
            out.push((u, v));
        }
    }
    out
}

/// Lengths for arbitrary pairs, one Dijkstra per distinct source.
pub fn pair_lengths(graph: &Graph, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut sources: Vec<usize> = pairs.iter().map(|p| p.0).collect::<HashSet<_>>().into_iter().collect();
    sources.sort_unstable();
    let rows = graph.distances_from(&sources);
    let lookup: HashMap<usize, &Vec<f64>> = sources.iter().copied().zip(&rows).collect();
    pairs
        .iter()
        .map(|&(u, v)| {
            let d = lookup[&u][v];
            if d.is_finite() { Ok(d) } else { Err(Error::Unreachable { from: u, to: v }) }
        })
        .collect()
}

/// Rescales `values` in place to the given mean; returns the multiplier.
pub fn normalize_mean(values: &mut [f64], target: f64) -> Result<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Degenerate("cannot rescale values with non-positive mean".into()));
    }
    let scale = target / mean;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(scale)
}

/// Samples a pool, normalizes it to mean 50, then takes the test split from
/// the front and the training subsample from the rest.
pub fn build_path_dataset<R: Rng + ?Sized>(
    graph: &Graph,
    features: NodeFeatures,
    pool_size: usize,
    test_size: usize,
    train_size: usize,
    rng: &mut R,
) -> Result<PathDataset> {
    if train_size == 0 {
        return Err(Error::EmptyDataset("training size is 0".into()));
    }
    let pool = sample_pairs(graph.nodes(), pool_size, rng);
    if pool.len() <= test_size {
        return Err(Error::EmptyDataset(format!("pool of {} pairs leaves nothing after {test_size} test pairs", pool.len())));
    }
    let mut targets = pair_lengths(graph, &pool)?;
    let scale = normalize_mean(&mut targets, TARGET_MEAN)?;
    let (test_pairs, rest_pairs) = pool.split_at(test_size);
    let (test_t, rest_t) = targets.split_at(test_size);
    let take = train_size.min(rest_pairs.len());
    let points = features.values.clone();
    Ok(PathDataset {
        train: PairSet::new(points.clone(), rest_pairs[..take].to_vec(), rest_t[..take].to_vec())?,
        test: PairSet::new(points, test_pairs.to_vec(), test_t.to_vec())?,
        features,
        scale,
    })
}

pub fn write_pairs_csv<W: Write>(data: &PairSet, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["src", "dst", "length"])?;
    for (&(u, v), t) in data.pairs.iter().zip(&data.targets) {
        out.write_record([u.to_string(), v.to_string(), format!("{t:.16e}")])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphModelKind {
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
    #[serde(rename = "widenorm-nm")]
    WidenormNm,
    #[serde(rename = "deepnorm-icnn")]
    DeepnormIcnn,
    #[serde(rename = "deepnorm-nm")]
    DeepnormNm,
    #[serde(rename = "mlp")]
    Mlp,
}

impl GraphModelKind {
    pub const ALL: [GraphModelKind; 5] = [
        GraphModelKind::Mahalanobis,
        GraphModelKind::WidenormNm,
        GraphModelKind::DeepnormIcnn,
        GraphModelKind::DeepnormNm,
        GraphModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphModelKind::Mahalanobis => "mahalanobis",
            GraphModelKind::WidenormNm => "widenorm-nm",
            GraphModelKind::DeepnormIcnn => "deepnorm-icnn",
            GraphModelKind::DeepnormNm => "deepnorm-nm",
            GraphModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for GraphModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        GraphModelKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown graph model '{s}'")))
    }
}

/// Embedding plus head for a graph model. `phi_depth` counts dense layers;
/// 0 feeds the raw features to the head.
pub fn graph_model_spec(kind: GraphModelKind, feature_dim: usize, phi_depth: usize, width: usize, directed: bool) -> DistanceSpec {
    let (embedding, e) = if phi_depth == 0 {
        (EmbeddingSpec::Identity { dim: feature_dim }, feature_dim)
    } else {
        (EmbeddingSpec::Dense { input_dim: feature_dim, depth: phi_depth - 1, width, output_dim: width }, width)
    };
    let deep = |activation, pooling| DeepNormSpec { input_dim: e, widths: vec![width; 3], activation, pooling };
    let neural = |base: HeadSpec| {
        HeadSpec::NeuralMetric(NeuralMetricSpec { base: Box::new(base), pieces: 5, pooling: Pooling::MaxMean })
    };
    let (head, mode) = match kind {
        GraphModelKind::Mahalanobis => (HeadSpec::Mahalanobis { input_dim: e, rows: width }, PairMode::Metric),
        GraphModelKind::WidenormNm => (
            neural(HeadSpec::WideNorm(WideNormSpec {
                input_dim: e,
                components: 32,
                component_dim: 32,
                asymmetric: directed,
                pooling: Pooling::Mean,
            })),
            PairMode::Metric,
        ),
        GraphModelKind::DeepnormIcnn => (HeadSpec::DeepNorm(deep(Activation::Relu, Pooling::Mean)), PairMode::Metric),
        GraphModelKind::DeepnormNm => (neural(HeadSpec::DeepNorm(deep(Activation::MaxRelu, Pooling::Mean))), PairMode::Metric),
        GraphModelKind::Mlp => (HeadSpec::Mlp(MlpSpec { input_dim: 2 * e, widths: vec![width; 3] }), PairMode::RawPair),
    };
    DistanceSpec { embedding, head, mode }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphExperiment {
    pub kind: GraphKind,
    pub size: usize,
    pub model: GraphModelKind,
    pub train_size: usize,
    pub pool_size: usize,
    pub test_size: usize,
    pub phi_depth: usize,
    pub width: usize,
    pub landmarks: usize,
    pub noise_sd: f64,
    pub distractors: usize,
    pub schedule: Schedule,
}

impl Default for GraphExperiment {
    fn default() -> Self {
        Self::full(GraphKind::Grid3d, GraphModelKind::DeepnormNm)
    }
}

impl GraphExperiment {
    /// 50³ grids (25×25 for taxi and push), 150K pool, 1000 epochs.
    pub fn full(kind: GraphKind, model: GraphModelKind) -> Self {
        let size = if matches!(kind, GraphKind::Taxi | GraphKind::Push) { 25 } else { 50 };
        Self {
            kind,
            size,
            model,
            train_size: 50_000,
            pool_size: 150_000,
            test_size: 10_000,
            phi_depth: 2,
            width: 128,
            landmarks: 32,
            noise_sd: 0.2,
            distractors: 96,
            schedule: Schedule::step_decay(1000, 256, 1e-3, 250, 5.0),
        }
    }

    /// 10³ grids (10×10 for taxi and push), 30K pool, 5K test pairs and a
    /// 40-epoch schedule dividing the rate by 5 every 10 epochs.
    pub fn desk(kind: GraphKind, model: GraphModelKind) -> Self {
        Self {
            size: 10,
            train_size: 20_000,
            pool_size: 30_000,
            test_size: 5_000,
            schedule: Schedule::step_decay(60, 256, 1e-3, 20, 5.0),
            ..Self::full(kind, model)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphOutcome {
    pub nodes: usize,
    pub edges: usize,
    pub feature_dim: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub curve: Vec<EpochRecord>,
    pub final_test_mse: f64,
}

#[derive(Debug, Clone)]
pub struct GraphRun {
    pub outcome: GraphOutcome,
    pub model: DistanceModel,
    pub graph: Graph,
    pub data: PathDataset,
}

/// Graph, features and pairs depend only on `(kind, size, seed)` and the data
/// settings, so every model trained under one seed sees the same dataset.
pub fn prepare_graph_data(cfg: &GraphExperiment, seed: u64) -> Result<(Graph, PathDataset)> {
    let graph = build_graph(cfg.kind, cfg.size, &mut seeds::stream(seed, "graph"))?;
    let features = landmark_features(&graph, cfg.landmarks, cfg.noise_sd, cfg.distractors, &mut seeds::stream(seed, "features"))?;
    let data =
        build_path_dataset(&graph, features, cfg.pool_size, cfg.test_size, cfg.train_size, &mut seeds::stream(seed, "pairs"))?;
    Ok((graph, data))
}

pub fn run_graph_experiment(cfg: &GraphExperiment, seed: u64) -> Result<GraphRun> {
    let (graph, data) = prepare_graph_data(cfg, seed)?;
    train_graph_model(cfg, graph, data, seed)
}

pub fn train_graph_model(cfg: &GraphExperiment, graph: Graph, data: PathDataset, seed: u64) -> Result<GraphRun> {
    let spec = graph_model_spec(cfg.model, data.features.dim(), cfg.phi_depth, cfg.width, graph.is_directed());
    let mut model = DistanceModel::new(spec, &mut seeds::stream(seed, &format!("init/{}", cfg.model)))?;
    let mut curve = Vec::with_capacity(cfg.schedule.epochs);
    fit(&mut model, &data.train, &cfg.schedule, &mut seeds::stream(seed, "shuffle"), |epoch, train_loss, m| {
        curve.push(EpochRecord { epoch, train_loss, test_mse: data.test.mse(m)? });
        Ok(())
    })?;
    let final_test_mse = match curve.last() {
        Some(r) => r.test_mse,
        None => data.test.mse(&model)?,
    };
    let outcome = GraphOutcome {
        nodes: graph.nodes(),
        edges: graph.edge_count(),
        feature_dim: data.features.dim(),
        train_pairs: data.train.len(),
        test_pairs: data.test.len(),
        curve,
        final_test_mse,
    };
    Ok(GraphRun { outcome, model, graph, data })
}
