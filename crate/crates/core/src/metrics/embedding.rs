use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Constraint, ConvGeom, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

/// Feature map `φ` applied to both endpoints of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Identity { dim: usize },
    /// Learned row per item; inputs are `b×1` columns of item indices.
    /// Equivalent to a linear map on one-hot vectors.
    Table { count: usize, dim: usize },
    /// `depth` ReLU layers of `width` units followed by an affine output layer.
    Dense { input_dim: usize, depth: usize, width: usize, output_dim: usize },
    /// Same-padded 3×3 convolutions with ReLU over `height × width × channels`
    /// images (channel-last rows), then a ReLU dense layer of `hidden` units
    /// and an affine output layer.
    Conv { height: usize, width: usize, channels: usize, filters: Vec<usize>, hidden: usize, output_dim: usize },
}

impl EmbeddingSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            EmbeddingSpec::Identity { dim } => *dim,
            EmbeddingSpec::Table { .. } => 1,
            EmbeddingSpec::Dense { input_dim, .. } => *input_dim,
            EmbeddingSpec::Conv { height, width, channels, .. } => height * width * channels,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EmbeddingSpec::Identity { dim } | EmbeddingSpec::Table { dim, .. } => *dim,
            EmbeddingSpec::Dense { output_dim, .. } | EmbeddingSpec::Conv { output_dim, .. } => *output_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Embedding {
    Identity { dim: usize },
    Table { count: usize, table: ParamId },
    Dense { layers: Vec<(ParamId, ParamId)> },
    Conv { convs: Vec<(ParamId, ParamId, ConvGeom)>, dense: Vec<(ParamId, ParamId)> },
}

impl Embedding {
    pub fn build<R: Rng + ?Sized>(spec: &EmbeddingSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            EmbeddingSpec::Conv { height, width, channels, filters, hidden, output_dim } => {
                let (h, w) = (*height, *width);
                if h == 0 || w == 0 || *channels == 0 || *hidden == 0 || *output_dim == 0 || filters.contains(&0) {
                    return Err(Error::InvalidConfig(format!("conv embedding dimensions must be positive, got {spec:?}")));
                }
                let mut convs = Vec::with_capacity(filters.len());
                let mut c_in = *channels;
                for (i, &c_out) in filters.iter().enumerate() {
                    let geom = ConvGeom { height: h, width: w, in_channels: c_in, out_channels: c_out };
                    let f = store.add_weight(format!("{prefix}.conv{i}.w"), c_out, 9 * c_in, Constraint::None, rng);
                    let b = store.add_weight(format!("{prefix}.conv{i}.b"), 1, c_out, Constraint::None, rng);
                    convs.push((f, b, geom));
                    c_in = c_out;
                }
                let mut dense = Vec::with_capacity(2);
                let mut fan_in = h * w * c_in;
                for (i, out) in [*hidden, *output_dim].into_iter().enumerate() {
                    let wt = store.add_weight(format!("{prefix}.fc{i}.w"), out, fan_in, Constraint::None, rng);
                    let b = store.add_weight(format!("{prefix}.fc{i}.b"), 1, out, Constraint::None, rng);
                    dense.push((wt, b));
                    fan_in = out;
                }
                Embedding::Conv { convs, dense }
            }
            _ => Self::build_flat(spec, store, prefix, rng)?,
        })
    }

    fn build_flat<R: Rng + ?Sized>(spec: &EmbeddingSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        Ok(match *spec {
            EmbeddingSpec::Identity { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidConfig("identity embedding needs a positive dimension".into()));
                }
                Embedding::Identity { dim }
            }
            EmbeddingSpec::Table { count, dim } => {
                if count == 0 || dim == 0 {
                    return Err(Error::InvalidConfig("embedding table dimensions must be positive".into()));
                }
                Embedding::Table { count, table: store.add_weight(format!("{prefix}.table"), count, dim, Constraint::None, rng) }
            }
            EmbeddingSpec::Dense { input_dim, depth, width, output_dim } => {
                if input_dim == 0 || output_dim == 0 || (depth > 0 && width == 0) {
                    return Err(Error::InvalidConfig(format!("dense embedding dimensions must be positive, got {spec:?}")));
                }
                let mut layers = Vec::with_capacity(depth + 1);
                let mut fan_in = input_dim;
                for i in 0..=depth {
                    let out = if i == depth { output_dim } else { width };
                    let w = store.add_weight(format!("{prefix}.layer{i}.w"), out, fan_in, Constraint::None, rng);
                    let b = store.add_weight(format!("{prefix}.layer{i}.b"), 1, out, Constraint::None, rng);
                    layers.push((w, b));
                    fan_in = out;
                }
                Embedding::Dense { layers }
            }
            EmbeddingSpec::Conv { .. } => unreachable!("conv embeddings are built by Embedding::build"),
        })
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamStore, x: NodeId) -> Result<NodeId> {
        match self {
            Embedding::Identity { dim } => {
                let got = tape.value(x).cols();
                if got != *dim {
                    return Err(Error::Dimension { what: "embedding input", expected: *dim, got });
                }
                Ok(x)
            }
            Embedding::Table { count, table } => {
                let idx = indices(tape.value(x), *count)?;
                let t = tape.param(params, *table);
                Ok(tape.gather_rows(t, &idx)?)
            }
            Embedding::Dense { layers } => dense_stack(tape, params, x, layers),
            Embedding::Conv { convs, dense } => {
                let mut h = x;
                for &(f, b, geom) in convs {
                    let (f, b) = (tape.param(params, f), tape.param(params, b));
                    let c = tape.conv3x3(h, f, b, geom)?;
                    h = tape.relu(c)?;
                }
                dense_stack(tape, params, h, dense)
            }
        }
    }
}

/// Affine layers with ReLU between them (none after the last).
fn dense_stack(tape: &mut Tape, params: &ParamStore, x: NodeId, layers: &[(ParamId, ParamId)]) -> Result<NodeId> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let (w, b) = (tape.param(params, w), tape.param(params, b));
        let lin = tape.linear(h, w)?;
        h = tape.add_row(lin, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

fn indices(col: &Tensor, count: usize) -> Result<Vec<usize>> {
    if col.cols() != 1 {
        return Err(Error::Dimension { what: "embedding table input", expected: 1, got: col.cols() });
    }
    col.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < count {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("item index {v} outside table of {count} rows")))
            }
        })
        .collect()
}
