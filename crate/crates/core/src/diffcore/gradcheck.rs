use super::{DiffError, Gradients, NodeId, ParamStore, Tape, Tensor};

/// A differentiable computation that can be rebuilt on a fresh tape.
///
/// Inputs are captured by the implementor; parameters are read from the
/// store passed in, which is what the finite-difference check perturbs.
pub trait Program {
    fn build(&self, tape: &mut Tape, params: &ParamStore) -> Result<NodeId, DiffError>;
}

impl<F> Program for F
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId, DiffError>,
{
    fn build(&self, tape: &mut Tape, params: &ParamStore) -> Result<NodeId, DiffError> {
        self(tape, params)
    }
}

pub fn evaluate(program: &dyn Program, params: &ParamStore) -> Result<Tensor, DiffError> {
    let mut tape = Tape::new();
    let out = program.build(&mut tape, params)?;
    Ok(tape.value(out).clone())
}

pub fn gradient(program: &dyn Program, params: &ParamStore) -> Result<Gradients, DiffError> {
    let mut tape = Tape::new();
    let out = program.build(&mut tape, params)?;
    tape.backward(out)
}

fn scalar_value(program: &dyn Program, params: &ParamStore) -> Result<f64, DiffError> {
    let t = evaluate(program, params)?;
    t.item().ok_or(DiffError::NonScalarOutput { node: usize::MAX, shape: t.shape().to_vec() })
}

/// Largest `|analytic - numeric| / (|numeric| + 1e-8)` over every parameter
/// entry, with central differences of the given step.
///
/// A difference `f(θ + h) − f(θ − h)` within a few ulps of `max(|f|, 1)` is
/// rounding in the intermediates, not slope, and counts as a numeric derivative of 0.
pub fn finite_diff_check(program: &dyn Program, params: &ParamStore, step: f64) -> Result<f64, DiffError> {
    if step <= 0.0 || !step.is_finite() {
        return Err(DiffError::InvalidTensor(format!("finite-difference step must be positive, got {step}")));
    }
    let grads = gradient(program, params)?;
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(params.tensor(id).shape()));
        for j in 0..params.tensor(id).len() {
            let orig = params.tensor(id).data()[j];
            work.tensor_mut(id).data_mut()[j] = orig + step;
            let up = scalar_value(program, &work)?;
            work.tensor_mut(id).data_mut()[j] = orig - step;
            let down = scalar_value(program, &work)?;
            work.tensor_mut(id).data_mut()[j] = orig;
            let resolution = 4.0 * f64::EPSILON * up.abs().max(down.abs()).max(1.0);
            let diff = up - down;
            let numeric = if diff.abs() <= resolution { 0.0 } else { diff / (2.0 * step) };
            let err = (analytic.data()[j] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Constraint;

    #[test]
    fn l2_norm_check_is_tight() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[3.0, 4.0]), Constraint::None);
        let prog = move |t: &mut Tape, p: &ParamStore| {
            let n = t.param(p, x);
            t.row_l2(n)
        };
        assert!(finite_diff_check(&prog, &store, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn constant_program_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("unused", Tensor::row(&[1.0, 2.0]), Constraint::None);
        let prog = |t: &mut Tape, _: &ParamStore| Ok(t.constant(Tensor::scalar(7.0)));
        assert_eq!(finite_diff_check(&prog, &store, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let store = ParamStore::new();
        let prog = |t: &mut Tape, _: &ParamStore| Ok(t.constant(Tensor::scalar(7.0)));
        assert!(finite_diff_check(&prog, &store, 0.0).is_err());
    }
}
