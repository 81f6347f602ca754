use super::{DiffError, Gradients, ParamStore, Tensor};

/// Adam with bias correction, followed by constraint projection.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), DiffError> {
        if store.len() != self.first.len() {
            return Err(DiffError::InvalidTensor(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (id, g) in grads.params() {
            if g.shape() != store.tensor(*id).shape() {
                return Err(DiffError::InvalidTensor(format!(
                    "gradient for '{}' has shape {:?}, parameter {:?}",
                    store.get(*id).name,
                    g.shape(),
                    store.tensor(*id).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = grads.param(id).map(Tensor::data);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let constraint = store.get(id).constraint;
            let p = store.tensor_mut(id);
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                let gj = grad.map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            constraint.project(p);
        }
        Ok(())
    }
}
