//! The four-cycle A–B, A–C, B–D, C–D with unit edges. Its shortest-path
//! metric has no exact Euclidean embedding in any dimension but is the L1
//! metric of the unit square, so a learned norm in R² fits it exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdist::{shortest_paths, Graph};
use crate::metrics::{fit, DistanceMatrix, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode, PairSet, Schedule};
use crate::norms::{Activation, DeepNormSpec, HeadSpec, Pooling, WideNormSpec};
use crate::seeds;

pub const NODES: [&str; 4] = ["A", "B", "C", "D"];

pub fn four_cycle() -> Result<Graph> {
    let mut g = Graph::new(4, false);
    for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
        g.add_edge(a, b, 1.0)?;
    }
    Ok(g)
}

/// The 12 ordered off-diagonal pairs with their path lengths.
pub fn four_cycle_pairs() -> Result<PairSet> {
    let all: Vec<usize> = (0..4).collect();
    let d = shortest_paths(&four_cycle()?, &all, &all)?;
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let targets = pairs.iter().map(|&(i, j)| d[i][j]).collect();
    PairSet::new(PairSet::index_points(4), pairs, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Figure1Config {
    pub euclidean_dims: Vec<usize>,
    pub restarts: usize,
    pub norm_dim: usize,
    pub deep_widths: Vec<usize>,
    pub wide_components: usize,
    pub wide_component_dim: usize,
    pub schedule: Schedule,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            euclidean_dims: (2..=16).collect(),
            restarts: 5,
            norm_dim: 2,
            deep_widths: vec![32, 32],
            wide_components: 8,
            wide_component_dim: 4,
            schedule: Schedule::step_decay(3000, 12, 1e-2, 1000, 10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure1Model {
    Euclidean,
    DeepNorm,
    WideNorm,
}

impl Figure1Model {
    pub fn name(self) -> &'static str {
        match self {
            Figure1Model::Euclidean => "euclidean",
            Figure1Model::DeepNorm => "deepnorm",
            Figure1Model::WideNorm => "widenorm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Fit {
    pub model: Figure1Model,
    pub dim: usize,
    pub restart: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Outcome {
    /// Every trained configuration.
    pub fits: Vec<Figure1Fit>,
    pub euclidean: Figure1Fit,
    pub deep_norm: Figure1Fit,
    pub wide_norm: Figure1Fit,
}

pub struct Figure1Run {
    pub outcome: Figure1Outcome,
    /// Learned distances of the best model of each kind, in outcome order.
    pub matrices: Vec<(Figure1Model, DistanceMatrix)>,
    /// The best model of each kind, in the same order.
    pub models: Vec<(Figure1Model, DistanceModel)>,
}

fn spec(cfg: &Figure1Config, model: Figure1Model, dim: usize) -> DistanceSpec {
    let head = match model {
        Figure1Model::Euclidean => HeadSpec::Euclidean { input_dim: dim },
        Figure1Model::DeepNorm => HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: dim,
            widths: cfg.deep_widths.clone(),
            activation: Activation::Relu,
            pooling: Pooling::Mean,
        }),
        Figure1Model::WideNorm => HeadSpec::WideNorm(WideNormSpec {
            input_dim: dim,
            components: cfg.wide_components,
            component_dim: cfg.wide_component_dim,
            asymmetric: false,
            pooling: Pooling::Mean,
        }),
    };
    DistanceSpec { embedding: EmbeddingSpec::Table { count: 4, dim }, head, mode: PairMode::Metric }
}

/// Best of `restarts` fits for each Euclidean dimension and for each norm in
/// `norm_dim` dimensions, by training MSE over all 12 pairs.
pub fn run_figure1(cfg: &Figure1Config, seed: u64) -> Result<Figure1Run> {
    if cfg.restarts == 0 || cfg.euclidean_dims.is_empty() || cfg.norm_dim == 0 {
        return Err(Error::InvalidConfig("figure1 needs restarts > 0, a Euclidean dimension and norm_dim > 0".into()));
    }
    let data = four_cycle_pairs()?;
    let mut fits = Vec::new();
    let mut best: Vec<(Figure1Fit, DistanceModel)> = Vec::new();
    let plan = cfg
        .euclidean_dims
        .iter()
        .map(|&d| (Figure1Model::Euclidean, d))
        .chain([(Figure1Model::DeepNorm, cfg.norm_dim), (Figure1Model::WideNorm, cfg.norm_dim)]);
    for (kind, dim) in plan {
        for restart in 0..cfg.restarts {
            let label = format!("figure1/{}/{dim}/{restart}", kind.name());
            let mut model = DistanceModel::new(spec(cfg, kind, dim), &mut seeds::stream(seed, &format!("{label}/init")))?;
            fit(&mut model, &data, &cfg.schedule, &mut seeds::stream(seed, &format!("{label}/shuffle")), |_, _, _| Ok(()))?;
            let f = Figure1Fit { model: kind, dim, restart, mse: data.mse(&model)? };
            fits.push(f);
            match best.iter_mut().find(|(b, _)| b.model == kind) {
                Some(slot) if f.mse < slot.0.mse => *slot = (f, model),
                Some(_) => {}
                None => best.push((f, model)),
            }
        }
    }
    let pick = |k: Figure1Model| best.iter().find(|(f, _)| f.model == k).map(|(f, _)| *f).expect("every kind is trained");
    let outcome = Figure1Outcome {
        euclidean: pick(Figure1Model::Euclidean),
        deep_norm: pick(Figure1Model::DeepNorm),
        wide_norm: pick(Figure1Model::WideNorm),
        fits,
    };
    let points = PairSet::index_points(4);
    let matrices = best
        .iter()
        .map(|(f, m)| Ok((f.model, crate::metrics::pairwise_naive(m, &points, &points)?)))
        .collect::<Result<_>>()?;
    let models = best.into_iter().map(|(f, m)| (f.model, m)).collect();
    Ok(Figure1Run { outcome, matrices, models })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_distances() {
        let p = four_cycle_pairs().unwrap();
        assert_eq!(p.len(), 12);
        let twos = p.targets.iter().filter(|&&t| t == 2.0).count();
        assert_eq!(twos, 4);
        assert!(p.targets.iter().all(|&t| t == 1.0 || t == 2.0));
    }
}
