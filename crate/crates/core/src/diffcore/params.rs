use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Projection applied to a parameter after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    /// Clip at zero.
    Nonneg,
    /// Clip to `[0, 1]`.
    UnitInterval,
}

impl Constraint {
    pub fn project(self, t: &mut Tensor) {
        match self {
            Constraint::None => {}
            Constraint::Nonneg => t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Constraint::UnitInterval => {
                t.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0))
            }
        }
    }

    pub fn holds(self, t: &Tensor) -> bool {
        match self {
            Constraint::None => true,
            Constraint::Nonneg => t.data().iter().all(|&v| v >= 0.0),
            Constraint::UnitInterval => t.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub constraint: Constraint,
}

/// Owns every trainable tensor of a model.
///
/// Architectures only hold [`ParamId`]s, so a store can be cloned to take a
/// frozen snapshot (e.g. a target network) without touching the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; the constraint is applied immediately.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor, constraint: Constraint) -> ParamId {
        constraint.project(&mut tensor);
        self.params.push(Parameter { name: name.into(), tensor, constraint });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix `rows x cols` drawn from `U(-1/sqrt(cols), 1/sqrt(cols))`.
    /// Non-negative parameters take the absolute value of the same draw.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        constraint: Constraint,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let v = rng.random_range(-bound..=bound);
                if constraint == Constraint::None { v } else { v.abs() }
            })
            .collect();
        self.add(name, Tensor::from_parts(vec![rows, cols], data), constraint)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Overwrites a parameter's values, keeping its shape and constraint.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<(), DiffError> {
        let p = &mut self.params[id.0];
        if p.tensor.shape() != tensor.shape() {
            return Err(DiffError::InvalidTensor(format!(
                "parameter '{}' has shape {:?}, got {:?}",
                p.name,
                p.tensor.shape(),
                tensor.shape()
            )));
        }
        p.tensor = tensor;
        Ok(())
    }

    pub fn project_all(&mut self) {
        for p in &mut self.params {
            p.constraint.project(&mut p.tensor);
        }
    }

    pub fn constraints_hold(&self) -> bool {
        self.params.iter().all(|p| p.constraint.holds(&p.tensor))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Exponential moving average towards `online`:
    /// `self <- rate * self + (1 - rate) * online`.
    pub fn polyak_update(&mut self, online: &ParamStore, rate: f64) -> Result<(), DiffError> {
        if online.params.len() != self.params.len() {
            return Err(DiffError::InvalidTensor("parameter stores differ in layout".into()));
        }
        for (target, src) in self.params.iter_mut().zip(&online.params) {
            if target.tensor.shape() != src.tensor.shape() {
                return Err(DiffError::InvalidTensor(format!(
                    "parameter '{}' shape mismatch in polyak update",
                    target.name
                )));
            }
            for (t, s) in target.tensor.data_mut().iter_mut().zip(src.tensor.data()) {
                *t = rate * *t + (1.0 - rate) * s;
            }
        }
        Ok(())
    }
}
