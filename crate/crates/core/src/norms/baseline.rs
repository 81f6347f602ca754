//! Unconstrained comparison heads: a plain MLP and a biased ICNN.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

/// ReLU MLP with biases and a scalar linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

fn bias<R: Rng + ?Sized>(store: &mut ParamStore, name: String, width: usize, fan_in: usize, rng: &mut R) -> ParamId {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..width).map(|_| rng.random_range(-bound..=bound)).collect();
    store.add(name, Tensor::new(vec![1, width], data).expect("finite init"), Constraint::None)
}

impl Mlp {
    pub(crate) fn build<R: Rng + ?Sized>(spec: &MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("mlp dimensions must be positive, got {spec:?}")));
        }
        let mut layers = Vec::new();
        let mut fan_in = spec.input_dim;
        for (i, &w) in spec.widths.iter().chain(std::iter::once(&1)).enumerate() {
            let weight = store.add_weight(format!("{prefix}.layer{i}.w"), w, fan_in, Constraint::None, rng);
            let b = bias(store, format!("{prefix}.layer{i}.b"), w, fan_in, rng);
            layers.push((weight, b));
            fan_in = w;
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub(crate) fn forward(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        let mut h = z;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(params, w), tape.param(params, b));
            let lin = tape.linear(h, w)?;
            h = tape.add_row(lin, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcnnSpec {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

/// Input-convex network with biases:
/// `z_i = relu(W_i⁺ z_{i-1} + U_i x + b_i)`, output `w⁺·z_k + u·x + c`.
/// Convex in its input but neither homogeneous nor non-negative.
#[derive(Debug, Clone)]
pub struct Icnn {
    spec: IcnnSpec,
    layers: Vec<(ParamId, Option<ParamId>, ParamId)>,
}

impl Icnn {
    pub(crate) fn build<R: Rng + ?Sized>(spec: &IcnnSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.widths.is_empty() || spec.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("icnn dimensions must be positive, got {spec:?}")));
        }
        let mut layers = Vec::new();
        let mut prev: Option<usize> = None;
        for (i, &w) in spec.widths.iter().chain(std::iter::once(&1)).enumerate() {
            let u = store.add_weight(format!("{prefix}.layer{i}.u"), w, spec.input_dim, Constraint::None, rng);
            let wp = prev.map(|p| store.add_weight(format!("{prefix}.layer{i}.w_plus"), w, p, Constraint::Nonneg, rng));
            let b = bias(store, format!("{prefix}.layer{i}.b"), w, spec.input_dim, rng);
            layers.push((u, wp, b));
            prev = Some(w);
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &IcnnSpec {
        &self.spec
    }

    pub(crate) fn forward(&self, tape: &mut Tape, params: &ParamStore, x: NodeId) -> Result<NodeId, DiffError> {
        let mut h: Option<NodeId> = None;
        let last = self.layers.len() - 1;
        for (i, &(u, wp, b)) in self.layers.iter().enumerate() {
            let u = tape.param(params, u);
            let mut pre = tape.linear(x, u)?;
            if let (Some(prev), Some(wp)) = (h, wp) {
                let wp = tape.param(params, wp);
                let carried = tape.linear(prev, wp)?;
                pre = tape.add(pre, carried)?;
            }
            let b = tape.param(params, b);
            pre = tape.add_row(pre, b)?;
            h = Some(if i < last { tape.relu(pre)? } else { pre });
        }
        Ok(h.expect("at least one layer"))
    }
}
