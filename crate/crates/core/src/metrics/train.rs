use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DistanceModel;
use crate::diffcore::{Adam, DiffError, Tape, Tensor};
use crate::error::{Error, Result};

/// Adam schedule with piecewise-constant learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `(epoch, lr)`: from `epoch` on, use `lr`.
    #[serde(default)]
    pub milestones: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn constant(epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self { epochs, batch_size, lr, milestones: Vec::new() }
    }

    /// Divides the rate by `factor` every `every` epochs.
    pub fn step_decay(epochs: usize, batch_size: usize, lr: f64, every: usize, factor: f64) -> Self {
        let milestones = (1..)
            .map(|k| k * every)
            .take_while(|&e| e < epochs)
            .enumerate()
            .map(|(i, e)| (e, lr / factor.powi(i as i32 + 1)))
            .collect();
        Self { epochs, batch_size, lr, milestones }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones.iter().filter(|(e, _)| *e <= epoch).map(|(_, lr)| *lr).last().unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("schedule needs batch_size > 0 and lr > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Supervised pairs over a shared table of points.
#[derive(Debug, Clone)]
pub struct PairSet {
    /// One row per point (feature vector, or a single item index).
    pub points: Tensor,
    pub pairs: Vec<(usize, usize)>,
    pub targets: Vec<f64>,
}

impl PairSet {
    pub fn new(points: Tensor, pairs: Vec<(usize, usize)>, targets: Vec<f64>) -> Result<Self> {
        if pairs.len() != targets.len() {
            return Err(Error::Dimension { what: "pair targets", expected: pairs.len(), got: targets.len() });
        }
        let n = points.rows();
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= n || *b >= n) {
            return Err(Error::InvalidConfig(format!("pair ({a}, {b}) indexes past {n} points")));
        }
        Ok(Self { points, pairs, targets })
    }

    /// Points `0..n` encoded as item indices for a table embedding.
    pub fn index_points(n: usize) -> Tensor {
        Tensor::from_parts(vec![n, 1], (0..n).map(|i| i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn gather(&self, idx: impl Iterator<Item = usize>, count: usize) -> Tensor {
        let d = self.points.cols();
        let mut data = Vec::with_capacity(count * d);
        for i in idx {
            data.extend_from_slice(self.points.row_slice(i));
        }
        Tensor::from_parts(vec![count, d], data)
    }

    /// `(xs, ys, targets)` for the given pair indices.
    pub fn batch(&self, which: &[usize]) -> (Tensor, Tensor, Tensor) {
        let xs = self.gather(which.iter().map(|&p| self.pairs[p].0), which.len());
        let ys = self.gather(which.iter().map(|&p| self.pairs[p].1), which.len());
        let t = Tensor::from_parts(vec![which.len(), 1], which.iter().map(|&p| self.targets[p]).collect());
        (xs, ys, t)
    }

    /// Predictions for every pair, in order.
    pub fn predict(&self, model: &DistanceModel, chunk: usize) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut out = Vec::with_capacity(self.len());
        for part in all.chunks(chunk.max(1)) {
            let (xs, ys, _) = self.batch(part);
            out.extend(model.distances(&xs, &ys)?);
        }
        Ok(out)
    }

    pub fn mse(&self, model: &DistanceModel) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset("no pairs to evaluate".into()));
        }
        let pred = self.predict(model, 4096)?;
        Ok(pred.iter().zip(&self.targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / self.len() as f64)
    }
}

/// Minibatch Adam on the squared error between `d(x, y)` and the targets.
///
/// `on_epoch(epoch, mean_train_loss, model)` runs after every epoch; returns
/// the per-epoch mean training loss.
pub fn fit<R: Rng + ?Sized>(
    model: &mut DistanceModel,
    data: &PairSet,
    schedule: &Schedule,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, f64, &DistanceModel) -> Result<()>,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set has no pairs".into()));
    }
    let mut adam = Adam::new(model.params(), schedule.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        adam.lr = schedule.lr_at(epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let (xs, ys, t) = data.batch(chunk);
            let mut tape = Tape::new();
            let (x, y, t) = (tape.input(xs), tape.input(ys), tape.input(t));
            let step = (|| -> Result<f64> {
                let pred = model.forward(&mut tape, x, y)?;
                let loss = tape.mse(pred, t)?;
                let grads = tape.backward(loss)?;
                adam.step(model.params_mut(), &grads)?;
                Ok(tape.value(loss).data()[0])
            })();
            let loss = match step {
                Ok(l) => l,
                Err(Error::Diff(DiffError::NonFinite { .. })) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            total += loss * chunk.len() as f64;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        curve.push(mean);
        on_epoch(epoch, mean, model)?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_milestones() {
        let s = Schedule::step_decay(1000, 256, 1e-3, 250, 5.0);
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(249), 1e-3);
        assert!((s.lr_at(250) - 2e-4).abs() < 1e-18);
        assert!((s.lr_at(999) - 1e-3 / 125.0).abs() < 1e-18);
        assert_eq!(s.milestones.len(), 3);
    }
}
