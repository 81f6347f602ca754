use rand::Rng;

use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

/// Per-channel concave, non-decreasing map `f(x) = min_j (w_j·x + b_j)`
/// with `w, b >= 0` and the first offset pinned to zero, so `f(0) = 0`.
///
/// Only the free offsets `b_1..b_{k-1}` are stored as a parameter; the
/// pinned zero column is prepended on the tape.
#[derive(Debug, Clone)]
pub struct ConcaveActivation {
    channels: usize,
    pieces: usize,
    slopes: ParamId,
    offsets: Option<ParamId>,
}

impl ConcaveActivation {
    pub(crate) fn build<R: Rng + ?Sized>(
        channels: usize,
        pieces: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if pieces == 0 {
            return Err(Error::InvalidConfig("concave activation needs at least one piece".into()));
        }
        let slopes = store.add(format!("{prefix}.concave_w"), Tensor::filled(&[channels, pieces], 1.0), Constraint::Nonneg);
        let offsets = (pieces > 1).then(|| {
            let data = (0..channels * (pieces - 1)).map(|_| rng.random_range(0.0..1.0)).collect();
            store.add(
                format!("{prefix}.concave_b"),
                Tensor::new(vec![channels, pieces - 1], data).expect("finite init"),
                Constraint::Nonneg,
            )
        });
        Ok(Self { channels, pieces, slopes, offsets })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn slopes(&self) -> ParamId {
        self.slopes
    }

    pub fn offsets(&self) -> Option<ParamId> {
        self.offsets
    }

    pub(crate) fn apply(&self, tape: &mut Tape, params: &ParamStore, x: NodeId) -> Result<NodeId, DiffError> {
        let w = tape.param(params, self.slopes);
        let zero = tape.constant(Tensor::zeros(&[self.channels, 1]));
        let b = match self.offsets {
            Some(id) => {
                let free = tape.param(params, id);
                tape.concat(zero, free)?
            }
            None => zero,
        };
        tape.min_affine(x, w, b)
    }

    /// Checks `w >= 0` and `b >= 0`.
    pub fn validate(&self, params: &ParamStore) -> Result<()> {
        if params.tensor(self.slopes).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Constraint("concave slopes must be non-negative".into()));
        }
        if let Some(id) = self.offsets {
            if params.tensor(id).data().iter().any(|&v| v < 0.0) {
                return Err(Error::Constraint("concave offsets must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Applies the activation to a batch of non-negative channel values
/// (`rows × channels`).
pub fn concave_apply(f: &ConcaveActivation, params: &ParamStore, values: &Tensor) -> Result<Tensor> {
    f.validate(params)?;
    if values.cols() != f.channels {
        return Err(Error::Dimension { what: "concave channels", expected: f.channels, got: values.cols() });
    }
    if values.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Constraint("concave activation inputs must be non-negative".into()));
    }
    let mut tape = Tape::new();
    let x = tape.input(values.clone());
    let y = f.apply(&mut tape, params, x)?;
    Ok(tape.value(y).clone())
}
