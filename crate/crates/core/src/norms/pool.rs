use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
    /// `alpha·max + (1 - alpha)·mean` with a learnable `alpha` in `[0, 1]`.
    MaxMean,
}

/// Global pooling site: `b×c -> b×1`.
#[derive(Debug, Clone)]
pub struct Pool {
    kind: Pooling,
    alpha: Option<ParamId>,
}

impl Pool {
    pub(crate) fn build<R: Rng + ?Sized>(kind: Pooling, store: &mut ParamStore, prefix: &str, _rng: &mut R) -> Self {
        let alpha = (kind == Pooling::MaxMean)
            .then(|| store.add(format!("{prefix}.pool_alpha"), Tensor::scalar(0.5), Constraint::UnitInterval));
        Self { kind, alpha }
    }

    pub fn kind(&self) -> Pooling {
        self.kind
    }

    pub fn alpha(&self) -> Option<ParamId> {
        self.alpha
    }

    pub(crate) fn apply(&self, tape: &mut Tape, params: &ParamStore, x: NodeId) -> Result<NodeId, DiffError> {
        match self.kind {
            Pooling::Mean => tape.row_mean(x),
            Pooling::Max => tape.row_max(x),
            Pooling::MaxMean => {
                let alpha = tape.param(params, self.alpha.expect("maxmean pool owns alpha"));
                let mean = tape.row_mean(x)?;
                let max = tape.row_max(x)?;
                let gap = tape.sub(max, mean)?;
                let mixed = tape.mul_scalar(gap, alpha)?;
                tape.add(mean, mixed)
            }
        }
    }
}

/// Plain-value MaxMean: `alpha·max + (1 - alpha)·mean`.
pub fn maxmean(values: &[f64], alpha: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    alpha * max + (1.0 - alpha) * mean
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxmean_formula() {
        assert_eq!(maxmean(&[1.0, 3.0], 1.0), 3.0);
        assert_eq!(maxmean(&[1.0, 3.0], 0.0), 2.0);
        assert_eq!(maxmean(&[1.0, 3.0], 0.5), 2.5);
    }
}
