use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{Pool, Pooling};
use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Pairwise over channels `(2i, 2i+1)`; needs an even layer width.
    MaxRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepNormSpec {
    pub input_dim: usize,
    /// Hidden layer widths; the scalar output comes from pooling the last one.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub pooling: Pooling,
}

impl DeepNormSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "deep norm needs a positive input dim and non-empty positive widths, got {self:?}"
            )));
        }
        if self.activation == Activation::MaxRelu && self.widths.iter().any(|w| w % 2 != 0) {
            return Err(Error::InvalidConfig(format!("maxrelu layers need even widths, got {:?}", self.widths)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DeepLayer {
    pub u: ParamId,
    pub w_plus: Option<ParamId>,
    pub mix: Option<(ParamId, ParamId)>,
}

/// Bias-free input-convex network: `h_i = g_i(W_i⁺ h_{i-1} + U_i x)` with
/// `h_0 = 0`, non-negative `W_i⁺` and positively homogeneous convex `g_i`.
///
/// The last hidden layer is clamped at zero before pooling so every output
/// channel is non-negative (the `max` half of a MaxReLU pair can be negative;
/// `relu(max(a, b))` is still convex and homogeneous).
#[derive(Debug, Clone)]
pub struct DeepNorm {
    spec: DeepNormSpec,
    layers: Vec<DeepLayer>,
    pool: Pool,
}

impl DeepNorm {
    pub(crate) fn build<R: Rng + ?Sized>(spec: &DeepNormSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut prev: Option<usize> = None;
        for (i, &width) in spec.widths.iter().enumerate() {
            let u = store.add_weight(format!("{prefix}.layer{i}.u"), width, spec.input_dim, Constraint::None, rng);
            let w_plus = prev.map(|p| store.add_weight(format!("{prefix}.layer{i}.w_plus"), width, p, Constraint::Nonneg, rng));
            let mix = (spec.activation == Activation::MaxRelu).then(|| {
                (
                    store.add(format!("{prefix}.layer{i}.maxrelu_alpha"), Tensor::scalar(0.5), Constraint::Nonneg),
                    store.add(format!("{prefix}.layer{i}.maxrelu_beta"), Tensor::scalar(0.5), Constraint::Nonneg),
                )
            });
            layers.push(DeepLayer { u, w_plus, mix });
            prev = Some(width);
        }
        let pool = Pool::build(spec.pooling, store, prefix, rng);
        Ok(Self { spec: spec.clone(), layers, pool })
    }

    pub fn spec(&self) -> &DeepNormSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_channels(&self) -> usize {
        *self.spec.widths.last().expect("validated")
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    /// Parameter ids per layer: `(U_i, W_i⁺, (alpha_i, beta_i))`.
    pub fn layer_params(&self) -> Vec<(ParamId, Option<ParamId>, Option<(ParamId, ParamId)>)> {
        self.layers.iter().map(|l| (l.u, l.w_plus, l.mix)).collect()
    }

    /// Non-negative last-layer activations, `b × width_last`.
    pub(crate) fn channels(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        let mut h: Option<NodeId> = None;
        for layer in &self.layers {
            let u = tape.param(params, layer.u);
            let mut pre = tape.linear(z, u)?;
            if let (Some(prev), Some(w)) = (h, layer.w_plus) {
                let w = tape.param(params, w);
                let carried = tape.linear(prev, w)?;
                pre = tape.add(pre, carried)?;
            }
            let act = match (self.spec.activation, layer.mix) {
                (Activation::MaxRelu, Some((a, b))) => {
                    let (a, b) = (tape.param(params, a), tape.param(params, b));
                    tape.maxrelu(pre, a, b)?
                }
                _ => tape.relu(pre)?,
            };
            h = Some(act);
        }
        let h = h.expect("at least one layer");
        match self.spec.activation {
            Activation::Relu => Ok(h),
            Activation::MaxRelu => tape.relu(h),
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        let ch = self.channels(tape, params, z)?;
        self.pool.apply(tape, params, ch)
    }
}
