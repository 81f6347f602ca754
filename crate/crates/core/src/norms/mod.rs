//! Norm heads that satisfy subadditivity by construction.
//!
//! Every head maps a batch of difference vectors `b×n` to `b×1`. Architectures
//! only hold [`ParamId`]s; the weights live in a [`ParamStore`] owned by the
//! enclosing [`NormModel`] (or by a larger model that embeds a head).

mod baseline;
mod concave;
mod deep;
mod io;
mod pool;
mod wide;

pub use baseline::{Icnn, IcnnSpec, Mlp, MlpSpec};
pub use concave::{concave_apply, ConcaveActivation};
pub use deep::{Activation, DeepNorm, DeepNormSpec};
pub use io::{load_model, save_model, ModelFile, ParamRecord, MODEL_FORMAT};
pub use pool::{maxmean, Pool, Pooling};
pub use wide::{WideNorm, WideNormSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Constraint, DiffError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralMetricSpec {
    /// A `deep_norm` or `wide_norm` spec; its own pooling field is ignored.
    pub base: Box<HeadSpec>,
    pub pieces: usize,
    pub pooling: Pooling,
}

/// Serializable architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    Euclidean { input_dim: usize },
    Mahalanobis { input_dim: usize, rows: usize },
    DeepNorm(DeepNormSpec),
    WideNorm(WideNormSpec),
    NeuralMetric(NeuralMetricSpec),
    Mlp(MlpSpec),
    Icnn(IcnnSpec),
    /// `h(z) + h(-z)`.
    Symmetrized { inner: Box<HeadSpec> },
    /// `h(z) + lambda·‖z‖₂`.
    Definite { inner: Box<HeadSpec>, lambda: f64 },
}

impl HeadSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            HeadSpec::Euclidean { input_dim } | HeadSpec::Mahalanobis { input_dim, .. } => *input_dim,
            HeadSpec::DeepNorm(s) => s.input_dim,
            HeadSpec::WideNorm(s) => s.input_dim,
            HeadSpec::NeuralMetric(s) => s.base.input_dim(),
            HeadSpec::Mlp(s) => s.input_dim,
            HeadSpec::Icnn(s) => s.input_dim,
            HeadSpec::Symmetrized { inner } | HeadSpec::Definite { inner, .. } => inner.input_dim(),
        }
    }

    /// Short architecture label used in reports.
    pub fn label(&self) -> String {
        match self {
            HeadSpec::Euclidean { .. } => "euclidean".into(),
            HeadSpec::Mahalanobis { .. } => "mahalanobis".into(),
            HeadSpec::DeepNorm(_) => "deep_norm".into(),
            HeadSpec::WideNorm(s) if s.asymmetric => "wide_norm_asym".into(),
            HeadSpec::WideNorm(_) => "wide_norm".into(),
            HeadSpec::NeuralMetric(s) => format!("neural_metric({})", s.base.label()),
            HeadSpec::Mlp(_) => "mlp".into(),
            HeadSpec::Icnn(_) => "icnn".into(),
            HeadSpec::Symmetrized { inner } => format!("symmetrized({})", inner.label()),
            HeadSpec::Definite { inner, .. } => format!("definite({})", inner.label()),
        }
    }

    /// Positive homogeneity and subadditivity hold exactly.
    pub fn is_norm(&self) -> bool {
        match self {
            HeadSpec::Euclidean { .. } | HeadSpec::Mahalanobis { .. } | HeadSpec::DeepNorm(_) | HeadSpec::WideNorm(_) => true,
            HeadSpec::Symmetrized { inner } | HeadSpec::Definite { inner, .. } => inner.is_norm(),
            HeadSpec::NeuralMetric(_) | HeadSpec::Mlp(_) | HeadSpec::Icnn(_) => false,
        }
    }

    /// `head(z - x) <= head(y - x) + head(z - y)` for every triple.
    pub fn induces_metric(&self) -> bool {
        self.is_norm() || matches!(self, HeadSpec::NeuralMetric(_))
    }

    pub fn is_convex(&self) -> bool {
        self.is_norm() || matches!(self, HeadSpec::Icnn(_))
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            HeadSpec::Euclidean { .. } | HeadSpec::Mahalanobis { .. } | HeadSpec::Symmetrized { .. } => true,
            HeadSpec::WideNorm(s) => !s.asymmetric,
            HeadSpec::Definite { inner, .. } => inner.is_symmetric(),
            _ => false,
        }
    }
}

/// Built head: parameter ids plus the forward pass.
#[derive(Debug, Clone)]
pub enum Head {
    Euclidean { input_dim: usize },
    Mahalanobis { input_dim: usize, weight: ParamId },
    Deep(DeepNorm),
    Wide(WideNorm),
    NeuralMetric { base: Box<Head>, concave: ConcaveActivation, pool: Pool },
    Mlp(Mlp),
    Icnn(Icnn),
    Symmetrized(Box<Head>),
    Definite { inner: Box<Head>, lambda: f64 },
}

impl Head {
    /// Registers the head's parameters under `prefix` and returns it.
    pub fn build<R: Rng + ?Sized>(spec: &HeadSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            HeadSpec::Euclidean { input_dim } => Head::Euclidean { input_dim: *input_dim },
            HeadSpec::Mahalanobis { input_dim, rows } => {
                if *input_dim == 0 || *rows == 0 {
                    return Err(Error::InvalidConfig("mahalanobis dimensions must be positive".into()));
                }
                let weight = store.add_weight(format!("{prefix}.w"), *rows, *input_dim, Constraint::None, rng);
                Head::Mahalanobis { input_dim: *input_dim, weight }
            }
            HeadSpec::DeepNorm(s) => Head::Deep(DeepNorm::build(s, store, prefix, rng)?),
            HeadSpec::WideNorm(s) => Head::Wide(WideNorm::build(s, store, prefix, rng)?),
            HeadSpec::NeuralMetric(s) => {
                let (base, channels) = match s.base.as_ref() {
                    HeadSpec::DeepNorm(d) => {
                        let d = DeepNormSpec { pooling: Pooling::Mean, ..d.clone() };
                        let net = DeepNorm::build(&d, store, &format!("{prefix}.base"), rng)?;
                        let c = net.output_channels();
                        (Head::Deep(net), c)
                    }
                    HeadSpec::WideNorm(w) => {
                        let w = WideNormSpec { pooling: Pooling::Mean, ..w.clone() };
                        let net = WideNorm::build(&w, store, &format!("{prefix}.base"), rng)?;
                        (Head::Wide(net), w.components)
                    }
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "neural metric base must be a deep or wide norm, got {}",
                            other.label()
                        )))
                    }
                };
                let concave = ConcaveActivation::build(channels, s.pieces, store, prefix, rng)?;
                let pool = Pool::build(s.pooling, store, prefix, rng);
                Head::NeuralMetric { base: Box::new(base), concave, pool }
            }
            HeadSpec::Mlp(s) => Head::Mlp(Mlp::build(s, store, prefix, rng)?),
            HeadSpec::Icnn(s) => Head::Icnn(Icnn::build(s, store, prefix, rng)?),
            HeadSpec::Symmetrized { inner } => Head::Symmetrized(Box::new(Head::build(inner, store, prefix, rng)?)),
            HeadSpec::Definite { inner, lambda } => {
                if !(*lambda > 0.0) {
                    return Err(Error::InvalidConfig(format!("definite wrapper needs lambda > 0, got {lambda}")));
                }
                Head::Definite { inner: Box::new(Head::build(inner, store, prefix, rng)?), lambda: *lambda }
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Euclidean { input_dim } | Head::Mahalanobis { input_dim, .. } => *input_dim,
            Head::Deep(d) => d.input_dim(),
            Head::Wide(w) => w.spec().input_dim,
            Head::NeuralMetric { base, .. } => base.input_dim(),
            Head::Mlp(m) => m.spec().input_dim,
            Head::Icnn(m) => m.spec().input_dim,
            Head::Symmetrized(inner) | Head::Definite { inner, .. } => inner.input_dim(),
        }
    }

    /// `b×n -> b×1`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, z: NodeId) -> Result<NodeId, DiffError> {
        match self {
            Head::Euclidean { .. } => tape.row_l2(z),
            Head::Mahalanobis { weight, .. } => {
                let w = tape.param(params, *weight);
                let p = tape.linear(z, w)?;
                tape.row_l2(p)
            }
            Head::Deep(d) => d.forward(tape, params, z),
            Head::Wide(w) => w.forward(tape, params, z),
            Head::NeuralMetric { base, concave, pool } => {
                let ch = match base.as_ref() {
                    Head::Deep(d) => d.channels(tape, params, z)?,
                    Head::Wide(w) => w.channels(tape, params, z)?,
                    _ => unreachable!("neural metric base is checked at build time"),
                };
                let f = concave.apply(tape, params, ch)?;
                pool.apply(tape, params, f)
            }
            Head::Mlp(m) => m.forward(tape, params, z),
            Head::Icnn(m) => m.forward(tape, params, z),
            Head::Symmetrized(inner) => {
                let pos = inner.forward(tape, params, z)?;
                let nz = tape.neg(z)?;
                let neg = inner.forward(tape, params, nz)?;
                tape.add(pos, neg)
            }
            Head::Definite { inner, lambda } => {
                let h = inner.forward(tape, params, z)?;
                let l2 = tape.row_l2(z)?;
                let l2 = tape.scale(l2, *lambda)?;
                tape.add(h, l2)
            }
        }
    }
}

/// A head together with its parameters.
#[derive(Debug, Clone)]
pub struct NormModel {
    spec: HeadSpec,
    head: Head,
    params: ParamStore,
}

impl NormModel {
    pub fn new<R: Rng + ?Sized>(spec: HeadSpec, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let head = Head::build(&spec, &mut params, "head", rng)?;
        Ok(Self { spec, head, params })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.head.input_dim()
    }

    /// Overwrites a parameter by name, keeping its shape.
    pub fn set_param(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let id = self.params.find(name).ok_or_else(|| Error::InvalidConfig(format!("no parameter named '{name}'")))?;
        let shape = self.params.tensor(id).shape().to_vec();
        self.params.set(id, Tensor::new(shape, values)?)?;
        Ok(())
    }

    fn check_batch(&self, z: &Tensor) -> Result<()> {
        if z.cols() != self.input_dim() {
            return Err(Error::Dimension { what: "norm input", expected: self.input_dim(), got: z.cols() });
        }
        Ok(())
    }

    /// Evaluates the head on each row of `z`.
    pub fn eval_batch(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(z)?;
        let mut tape = Tape::new();
        let x = tape.input(z.clone());
        let out = self.head.forward(&mut tape, &self.params, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_batch(&Tensor::row(x))?[0])
    }

    /// Builds the forward pass of a batch on an existing tape.
    pub fn forward(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let n = tape.value(z).cols();
        if n != self.input_dim() {
            return Err(Error::Dimension { what: "norm input", expected: self.input_dim(), got: n });
        }
        Ok(self.head.forward(tape, &self.params, z)?)
    }
}

/// `‖W x‖₂`.
pub fn mahalanobis(w: &Tensor, x: &[f64]) -> Result<f64> {
    if w.cols() != x.len() {
        return Err(Error::Dimension { what: "mahalanobis input", expected: w.cols(), got: x.len() });
    }
    let sq: f64 = (0..w.rows())
        .map(|r| {
            let v: f64 = w.row_slice(r).iter().zip(x).map(|(a, b)| a * b).sum();
            v * v
        })
        .sum();
    Ok(sq.sqrt())
}

/// `(max(x, y), alpha·relu(x) + beta·relu(y))`.
pub fn maxrelu(x: f64, y: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Constraint(format!("maxrelu coefficients must be non-negative, got ({alpha}, {beta})")));
    }
    Ok((x.max(y), alpha * x.max(0.0) + beta * y.max(0.0)))
}

/// MaxReLU over channel pairs `(2i, 2i+1)`, output interleaved `[max, mix]`.
pub fn maxrelu_channels(values: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if !values.len().is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("maxrelu needs an even channel count, got {}", values.len())));
    }
    let mut out = Vec::with_capacity(values.len());
    for pair in values.chunks_exact(2) {
        let (m, r) = maxrelu(pair[0], pair[1], alpha, beta)?;
        out.push(m);
        out.push(r);
    }
    Ok(out)
}

fn expect_head<'a>(model: &'a NormModel, ok: fn(&Head) -> bool, what: &'static str) -> Result<&'a NormModel> {
    if ok(model.head()) {
        Ok(model)
    } else {
        Err(Error::Unsupported(format!("expected a {what} head, got {}", model.spec().label())))
    }
}

pub fn deep_norm_forward(model: &NormModel, x: &[f64]) -> Result<f64> {
    expect_head(model, |h| matches!(h, Head::Deep(_)), "deep norm")?.eval(x)
}

pub fn wide_norm_forward(model: &NormModel, x: &[f64]) -> Result<f64> {
    expect_head(model, |h| matches!(h, Head::Wide(_)), "wide norm")?.eval(x)
}

pub fn neural_metric_forward(model: &NormModel, z: &[f64]) -> Result<f64> {
    expect_head(model, |h| matches!(h, Head::NeuralMetric { .. }), "neural metric")?.eval(z)
}

/// `relu(x :: -x)`.
pub fn asymmetrize_input(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).chain(x.iter().map(|v| (-v).max(0.0))).collect()
}

/// `h(z) + h(-z)`: symmetric whenever `h` is subadditive and homogeneous.
pub fn symmetrize(spec: HeadSpec) -> HeadSpec {
    HeadSpec::Symmetrized { inner: Box::new(spec) }
}

/// `h(z) + lambda·‖z‖₂`: positive definite for `lambda > 0`.
pub fn make_definite(spec: HeadSpec, lambda: f64) -> Result<HeadSpec> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("definite wrapper needs lambda > 0, got {lambda}")));
    }
    Ok(HeadSpec::Definite { inner: Box::new(spec), lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn toy_deep() -> NormModel {
        let spec = HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: 2,
            widths: vec![2, 1],
            activation: Activation::Relu,
            pooling: Pooling::Mean,
        });
        let mut m = NormModel::new(spec, &mut rng()).unwrap();
        m.set_param("head.layer0.u", vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.set_param("head.layer1.u", vec![0.0, 0.0]).unwrap();
        m.set_param("head.layer1.w_plus", vec![1.0, 1.0]).unwrap();
        m
    }

    #[test]
    fn mahalanobis_examples() {
        assert_eq!(mahalanobis(&Tensor::identity(2), &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(mahalanobis(&Tensor::zeros(&[2, 2]), &[3.0, 4.0]).unwrap(), 0.0);
        let d = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!((mahalanobis(&d, &[1.0, 1.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(mahalanobis(&d, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn maxrelu_examples() {
        assert_eq!(maxrelu(2.0, -3.0, 1.0, 1.0).unwrap(), (2.0, 2.0));
        assert_eq!(maxrelu(-1.0, -2.0, 0.3, 0.9).unwrap(), (-1.0, 0.0));
        let (a, b) = maxrelu(0.7, -0.2, 0.4, 1.3).unwrap();
        let (a2, b2) = maxrelu(1.4, -0.4, 0.4, 1.3).unwrap();
        assert_eq!((a2, b2), (2.0 * a, 2.0 * b));
        assert!(maxrelu_channels(&[1.0, 2.0, 3.0], 1.0, 1.0).is_err());
        assert!(maxrelu(1.0, 1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn toy_deep_norm() {
        let m = toy_deep();
        assert_eq!(deep_norm_forward(&m, &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(deep_norm_forward(&m, &[2.0, -2.0]).unwrap(), 2.0);
        assert_eq!(deep_norm_forward(&m, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(deep_norm_forward(&m, &[1.0]).is_err());
    }

    #[test]
    fn wide_norm_examples() {
        let spec = |components, pooling| {
            HeadSpec::WideNorm(WideNormSpec { input_dim: 2, components, component_dim: 2, asymmetric: false, pooling })
        };
        let mut m = NormModel::new(spec(1, Pooling::MaxMean), &mut rng()).unwrap();
        m.set_param("head.components", vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.set_param("head.pool_alpha", vec![0.0]).unwrap();
        assert!((wide_norm_forward(&m, &[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);

        let mut m = NormModel::new(spec(2, Pooling::MaxMean), &mut rng()).unwrap();
        // Component values 1 and 3 at x = (1, 0).
        m.set_param("head.components", vec![1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        for (alpha, want) in [(1.0, 3.0), (0.0, 2.0), (0.5, 2.5)] {
            m.set_param("head.pool_alpha", vec![alpha]).unwrap();
            assert_eq!(wide_norm_forward(&m, &[1.0, 0.0]).unwrap(), want);
        }
    }

    #[test]
    fn asymmetric_wide_norm() {
        let spec = HeadSpec::WideNorm(WideNormSpec {
            input_dim: 2,
            components: 1,
            component_dim: 4,
            asymmetric: true,
            pooling: Pooling::Mean,
        });
        let mut m = NormModel::new(spec, &mut rng()).unwrap();
        let eye: Vec<f64> = Tensor::identity(4).into_data();
        m.set_param("head.components", eye).unwrap();
        for x in [[3.0, -4.0], [-1.0, 2.0], [0.5, 0.5]] {
            let n = wide_norm_forward(&m, &x).unwrap();
            let neg = wide_norm_forward(&m, &[-x[0], -x[1]]).unwrap();
            assert!((n - (x[0] * x[0] + x[1] * x[1]).sqrt()).abs() < 1e-12);
            assert_eq!(n, neg);
        }
        m.set_param(
            "head.components",
            vec![2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(wide_norm_forward(&m, &[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(wide_norm_forward(&m, &[-1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn lift_examples() {
        assert_eq!(asymmetrize_input(&[1.0, -2.0]), vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(asymmetrize_input(&[0.0, 0.0]), vec![0.0; 4]);
    }

    #[test]
    fn symmetrize_relu_coordinate() {
        // relu of the first coordinate as a one-layer deep norm.
        let base = HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: 2,
            widths: vec![1],
            activation: Activation::Relu,
            pooling: Pooling::Mean,
        });
        let mut m = NormModel::new(symmetrize(base), &mut rng()).unwrap();
        m.set_param("head.layer0.u", vec![1.0, 0.0]).unwrap();
        assert_eq!(m.eval(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m.eval(&[-1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn definite_of_zero_is_euclidean() {
        let base = HeadSpec::Mahalanobis { input_dim: 2, rows: 2 };
        assert!(make_definite(base.clone(), 0.0).is_err());
        let mut m = NormModel::new(make_definite(base, 1.0).unwrap(), &mut rng()).unwrap();
        m.set_param("head.w", vec![0.0; 4]).unwrap();
        assert_eq!(m.eval(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(m.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn concave_examples() {
        let mut store = ParamStore::new();
        let f = ConcaveActivation::build(1, 2, &mut store, "f", &mut rng()).unwrap();
        store.set(f.slopes(), Tensor::row(&[1.0, 0.5])).unwrap();
        store.set(f.offsets().unwrap(), Tensor::scalar(1.0)).unwrap();
        let out = concave_apply(&f, &store, &Tensor::matrix(3, 1, vec![0.0, 1.0, 4.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 3.0]);

        let mut store = ParamStore::new();
        let id = ConcaveActivation::build(1, 1, &mut store, "f", &mut rng()).unwrap();
        let out = concave_apply(&id, &store, &Tensor::matrix(2, 1, vec![0.25, 7.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.25, 7.0]);
        assert!(concave_apply(&id, &store, &Tensor::scalar(-1.0)).is_err());
        store.set(id.slopes(), Tensor::scalar(-1.0)).unwrap();
        assert!(concave_apply(&id, &store, &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn neural_metric_zero_and_identity() {
        let spec = HeadSpec::NeuralMetric(NeuralMetricSpec {
            base: Box::new(HeadSpec::WideNorm(WideNormSpec {
                input_dim: 3,
                components: 4,
                component_dim: 2,
                asymmetric: false,
                pooling: Pooling::Mean,
            })),
            pieces: 1,
            pooling: Pooling::Mean,
        });
        let m = NormModel::new(spec, &mut rng()).unwrap();
        assert_eq!(neural_metric_forward(&m, &[0.0; 3]).unwrap(), 0.0);

        let base = HeadSpec::WideNorm(WideNormSpec {
            input_dim: 3,
            components: 4,
            component_dim: 2,
            asymmetric: false,
            pooling: Pooling::Mean,
        });
        let plain = NormModel::new(base, &mut rng()).unwrap();
        let mut nm = m.clone();
        let w = plain.params().tensor(plain.params().find("head.components").unwrap()).data().to_vec();
        nm.set_param("head.base.components", w).unwrap();
        let z = [0.3, -1.2, 0.8];
        assert!((nm.eval(&z).unwrap() - plain.eval(&z).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn neural_metric_rejects_other_bases() {
        let spec = HeadSpec::NeuralMetric(NeuralMetricSpec {
            base: Box::new(HeadSpec::Euclidean { input_dim: 2 }),
            pieces: 2,
            pooling: Pooling::Max,
        });
        assert!(NormModel::new(spec, &mut rng()).is_err());
    }

    #[test]
    fn max_of_four_functionals() {
        // max(x, y, -x - y, 0.5x - 2y) via two MaxReLU layers and max pooling.
        let spec = HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: 2,
            widths: vec![4, 2],
            activation: Activation::MaxRelu,
            pooling: Pooling::Max,
        });
        let mut m = NormModel::new(spec, &mut rng()).unwrap();
        let a = [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0], [0.5, -2.0]];
        m.set_param("head.layer0.u", a.iter().flatten().copied().collect()).unwrap();
        m.set_param("head.layer1.u", vec![0.0; 4]).unwrap();
        m.set_param("head.layer1.w_plus", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        for name in ["head.layer1.maxrelu_alpha", "head.layer1.maxrelu_beta"] {
            m.set_param(name, vec![0.0]).unwrap();
        }
        let mut r = rng();
        let pts: Vec<f64> = (0..2000).map(|_| r.random_range(-5.0..5.0)).collect();
        let out = m.eval_batch(&Tensor::matrix(1000, 2, pts.clone()).unwrap()).unwrap();
        for (p, got) in pts.chunks(2).zip(out) {
            let want = a.iter().map(|w| w[0] * p[0] + w[1] * p[1]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(got, want);
        }
    }
}
