//! Induced distances `d(x, y) = head(φ(y) − φ(x))` and pairwise matrices.

mod embedding;
mod matrix;
mod pairwise;
mod train;

pub use embedding::{Embedding, EmbeddingSpec};
pub use matrix::DistanceMatrix;
pub use pairwise::{pairwise_naive, pairwise_widenorm_fast};
pub use train::{fit, PairSet, Schedule};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{NodeId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::norms::{Head, HeadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// `head(φ(y) − φ(x))`.
    #[default]
    Metric,
    /// `mlp(φ(x) :: φ(y))`; no axioms are guaranteed.
    RawPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub embedding: EmbeddingSpec,
    pub head: HeadSpec,
    #[serde(default)]
    pub mode: PairMode,
}

impl DistanceSpec {
    pub fn validate(&self) -> Result<()> {
        let e = self.embedding.output_dim();
        match self.mode {
            PairMode::Metric if self.head.input_dim() != e => {
                Err(Error::Dimension { what: "head input vs embedding output", expected: e, got: self.head.input_dim() })
            }
            PairMode::RawPair if !matches!(self.head, HeadSpec::Mlp(_)) => {
                Err(Error::InvalidConfig("raw-pair mode needs an mlp head".into()))
            }
            PairMode::RawPair if self.head.input_dim() != 2 * e => {
                Err(Error::Dimension { what: "raw-pair head input", expected: 2 * e, got: self.head.input_dim() })
            }
            _ => Ok(()),
        }
    }

    /// Whether the induced distance satisfies the triangle inequality by construction.
    pub fn is_metric(&self) -> bool {
        self.mode == PairMode::Metric && self.head.induces_metric()
    }
}

/// Embedding plus head, with one parameter store shared by both.
///
/// Cloning the model gives an independent snapshot that can be evaluated
/// from several threads.
#[derive(Debug, Clone)]
pub struct DistanceModel {
    spec: DistanceSpec,
    embedding: Embedding,
    head: Head,
    params: ParamStore,
}

impl DistanceModel {
    pub fn new<R: Rng + ?Sized>(spec: DistanceSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let embedding = Embedding::build(&spec.embedding, &mut params, "phi", rng)?;
        let head = Head::build(&spec.head, &mut params, "head", rng)?;
        Ok(Self { spec, embedding, head, params })
    }

    pub fn spec(&self) -> &DistanceSpec {
        &self.spec
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.embedding.input_dim()
    }

    pub fn embed_node(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.embedding.apply(tape, &self.params, x)
    }

    /// Head applied to already-embedded rows.
    pub fn head_node(&self, tape: &mut Tape, ex: NodeId, ey: NodeId) -> Result<NodeId> {
        let z = match self.spec.mode {
            PairMode::Metric => tape.sub(ey, ex)?,
            PairMode::RawPair => tape.concat(ex, ey)?,
        };
        Ok(self.head.forward(tape, &self.params, z)?)
    }

    /// Row-aligned distances `d(xs_i, ys_i)` as a `b×1` node.
    pub fn forward(&self, tape: &mut Tape, xs: NodeId, ys: NodeId) -> Result<NodeId> {
        let ex = self.embed_node(tape, xs)?;
        let ey = self.embed_node(tape, ys)?;
        self.head_node(tape, ex, ey)
    }

    fn check_rows(&self, t: &Tensor) -> Result<()> {
        if t.cols() != self.input_dim() {
            return Err(Error::Dimension { what: "distance input", expected: self.input_dim(), got: t.cols() });
        }
        Ok(())
    }

    pub fn distances(&self, xs: &Tensor, ys: &Tensor) -> Result<Vec<f64>> {
        self.check_rows(xs)?;
        self.check_rows(ys)?;
        if xs.rows() != ys.rows() {
            return Err(Error::Dimension { what: "pair batch rows", expected: xs.rows(), got: ys.rows() });
        }
        let mut tape = Tape::new();
        let (x, y) = (tape.input(xs.clone()), tape.input(ys.clone()));
        let out = self.forward(&mut tape, x, y)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.distances(&Tensor::row(x), &Tensor::row(y))?[0])
    }

    /// `φ` applied to each row.
    pub fn embed(&self, xs: &Tensor) -> Result<Tensor> {
        self.check_rows(xs)?;
        let mut tape = Tape::new();
        let x = tape.input(xs.clone());
        let e = self.embed_node(&mut tape, x)?;
        Ok(tape.value(e).clone())
    }
}

/// `d(x, y)` for a single pair.
pub fn distance(model: &DistanceModel, x: &[f64], y: &[f64]) -> Result<f64> {
    model.distance(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{Activation, DeepNormSpec, MlpSpec, Pooling};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn euclidean_identity_distance() {
        let spec = DistanceSpec {
            embedding: EmbeddingSpec::Identity { dim: 2 },
            head: HeadSpec::Euclidean { input_dim: 2 },
            mode: PairMode::Metric,
        };
        let m = DistanceModel::new(spec, &mut rng()).unwrap();
        assert_eq!(distance(&m, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(distance(&m, &[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn same_point_is_zero() {
        let spec = DistanceSpec {
            embedding: EmbeddingSpec::Dense { input_dim: 3, depth: 2, width: 8, output_dim: 4 },
            head: HeadSpec::DeepNorm(DeepNormSpec {
                input_dim: 4,
                widths: vec![6, 6],
                activation: Activation::MaxRelu,
                pooling: Pooling::MaxMean,
            }),
            mode: PairMode::Metric,
        };
        let m = DistanceModel::new(spec, &mut rng()).unwrap();
        let x = [0.4, -1.0, 2.0];
        assert_eq!(m.distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn table_embedding_indices() {
        let spec = DistanceSpec {
            embedding: EmbeddingSpec::Table { count: 4, dim: 2 },
            head: HeadSpec::Euclidean { input_dim: 2 },
            mode: PairMode::Metric,
        };
        let m = DistanceModel::new(spec, &mut rng()).unwrap();
        assert!(m.distance(&[0.0], &[3.0]).unwrap() > 0.0);
        assert!(m.distance(&[0.0], &[4.0]).is_err());
        assert!(m.distance(&[0.5], &[1.0]).is_err());
    }

    #[test]
    fn raw_pair_needs_mlp_of_double_width() {
        let mut spec = DistanceSpec {
            embedding: EmbeddingSpec::Identity { dim: 2 },
            head: HeadSpec::Mlp(MlpSpec { input_dim: 4, widths: vec![8] }),
            mode: PairMode::RawPair,
        };
        assert!(DistanceModel::new(spec.clone(), &mut rng()).is_ok());
        spec.head = HeadSpec::Euclidean { input_dim: 4 };
        assert!(DistanceModel::new(spec, &mut rng()).is_err());
    }
}
