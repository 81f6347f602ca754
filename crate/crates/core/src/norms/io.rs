//! JSON model files.
//!
//! Field order is fixed: `format`, `architecture`, `parameters`. Parameters
//! appear in registration order, each as `name`, `shape`, `constraint`,
//! `values` (row-major 64-bit floats).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HeadSpec, NormModel};
use crate::diffcore::{Constraint, Tensor};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "triq-norm-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub constraint: Constraint,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub architecture: HeadSpec,
    pub parameters: Vec<ParamRecord>,
}

impl ModelFile {
    pub fn from_model(model: &NormModel) -> Self {
        let parameters = model
            .params()
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                constraint: p.constraint,
                values: p.tensor.data().to_vec(),
            })
            .collect();
        Self { format: MODEL_FORMAT.into(), architecture: model.spec().clone(), parameters }
    }

    pub fn into_model(self) -> Result<NormModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown format tag '{}'", self.format)));
        }
        // Initial values are overwritten, so the seed is irrelevant.
        let mut model = NormModel::new(self.architecture, &mut ChaCha8Rng::seed_from_u64(0))?;
        if model.params().len() != self.parameters.len() {
            return Err(Error::Format(format!(
                "architecture has {} parameters, file has {}",
                model.params().len(),
                self.parameters.len()
            )));
        }
        let ids: Vec<_> = model.params().ids().collect();
        for (id, rec) in ids.into_iter().zip(self.parameters) {
            let p = model.params().get(id);
            if p.name != rec.name || p.tensor.shape() != rec.shape.as_slice() || p.constraint != rec.constraint {
                return Err(Error::Format(format!("parameter '{}' does not match the architecture", rec.name)));
            }
            let t = Tensor::new(rec.shape, rec.values).map_err(|e| Error::Format(e.to_string()))?;
            if !rec.constraint.holds(&t) {
                return Err(Error::Constraint(format!("stored parameter '{}' violates its constraint", rec.name)));
            }
            model.params_mut().set(id, t)?;
        }
        Ok(model)
    }
}

pub fn save_model(model: &NormModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &ModelFile::from_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NormModel> {
    let file = std::fs::File::open(path)?;
    let parsed: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    parsed.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{Activation, DeepNormSpec, Pooling};

    #[test]
    fn round_trip_is_exact() {
        let spec = HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: 3,
            widths: vec![4, 4],
            activation: Activation::MaxRelu,
            pooling: Pooling::MaxMean,
        });
        let model = NormModel::new(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let json = serde_json::to_string(&ModelFile::from_model(&model)).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        let loaded = back.into_model().unwrap();
        assert_eq!(loaded.params(), model.params());
        let x = [0.1, -0.7, 2.5];
        assert_eq!(loaded.eval(&x).unwrap(), model.eval(&x).unwrap());
        assert!(json.starts_with("{\"format\""));
    }

    #[test]
    fn rejects_wrong_tag_and_shapes() {
        let model = NormModel::new(HeadSpec::Mahalanobis { input_dim: 2, rows: 2 }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut f = ModelFile::from_model(&model);
        f.format = "other".into();
        assert!(matches!(f.clone().into_model(), Err(Error::Format(_))));
        f.format = MODEL_FORMAT.into();
        f.parameters[0].shape = vec![1, 4];
        assert!(matches!(f.into_model(), Err(Error::Format(_))));
    }
}
