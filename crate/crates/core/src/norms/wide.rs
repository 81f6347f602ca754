use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{Pool, Pooling};
use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideNormSpec {
    pub input_dim: usize,
    pub components: usize,
    /// Rows per Mahalanobis component.
    pub component_dim: usize,
    /// Lift the input through `relu(x :: -x)` and keep the weights non-negative.
    pub asymmetric: bool,
    pub pooling: Pooling,
}

impl WideNormSpec {
    pub fn lifted_dim(&self) -> usize {
        if self.asymmetric { 2 * self.input_dim } else { self.input_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.components == 0 || self.component_dim == 0 {
            return Err(Error::InvalidConfig(format!("wide norm dimensions must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Max-mean pooled mixture of Mahalanobis norms `‖W_i x‖₂`.
///
/// All components share one stacked weight matrix of shape
/// `(components·component_dim) × lifted_dim`.
#[derive(Debug, Clone)]
pub struct WideNorm {
    spec: WideNormSpec,
    weight: ParamId,
    pool: Pool,
}

impl WideNorm {
    pub(crate) fn build<R: Rng + ?Sized>(spec: &WideNormSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let constraint = if spec.asymmetric { Constraint::Nonneg } else { Constraint::None };
        let weight = store.add_weight(
            format!("{prefix}.components"),
            spec.components * spec.component_dim,
            spec.lifted_dim(),
            constraint,
            rng,
        );
        let pool = Pool::build(spec.pooling, store, prefix, rng);
        Ok(Self { spec: spec.clone(), weight, pool })
    }

    pub fn spec(&self) -> &WideNormSpec {
        &self.spec
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub(crate) fn lift(tape: &mut Tape, z: NodeId) -> Result<NodeId, DiffError> {
        let neg = tape.neg(z)?;
        let both = tape.concat(z, neg)?;
        tape.relu(both)
    }

    /// Component norms, `b × components`.
    pub(crate) fn channels(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        let input = if self.spec.asymmetric { Self::lift(tape, z)? } else { z };
        let w = tape.param(params, self.weight);
        let proj = tape.linear(input, w)?;
        tape.group_l2(proj, self.spec.component_dim)
    }

    pub(crate) fn forward(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        let ch = self.channels(tape, params, z)?;
        self.pool.apply(tape, params, ch)
    }
}
