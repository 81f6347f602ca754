//! Sampled checks of the metric (M1–M4), norm (N1–N5) and convexity (C1)
//! axioms, plus the exhaustive triangle count on finite matrices.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{DistanceMatrix, DistanceModel};
use crate::norms::{HeadSpec, NormModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axiom {
    /// `d(x, y) >= 0`.
    M1,
    /// `d(x, x) = 0` and `d(x, y) > 0` for sampled `x != y`.
    M2,
    /// `d(x, z) <= d(x, y) + d(y, z)`.
    M3,
    /// `d(x, y) = d(y, x)`.
    M4,
    /// `|0| = 0` and `|x| > 0` for sampled `x != 0`.
    N1,
    /// `|a x| = a |x|` for `a >= 0`.
    N2,
    /// `|x + y| <= |x| + |y|`.
    N3,
    /// `|x| = |-x|`.
    N4,
    /// `0 <= x <= y` element-wise implies `|x| <= |y|`.
    N5,
    /// `|l x + (1 - l) y| <= l |x| + (1 - l) |y|`.
    C1,
}

impl Axiom {
    pub const ALL: [Axiom; 10] =
        [Axiom::M1, Axiom::M2, Axiom::M3, Axiom::M4, Axiom::N1, Axiom::N2, Axiom::N3, Axiom::N4, Axiom::N5, Axiom::C1];

    pub fn id(self) -> &'static str {
        match self {
            Axiom::M1 => "M1",
            Axiom::M2 => "M2",
            Axiom::M3 => "M3",
            Axiom::M4 => "M4",
            Axiom::N1 => "N1",
            Axiom::N2 => "N2",
            Axiom::N3 => "N3",
            Axiom::N4 => "N4",
            Axiom::N5 => "N5",
            Axiom::C1 => "C1",
        }
    }

    fn is_norm_axiom(self) -> bool {
        matches!(self, Axiom::N1 | Axiom::N2 | Axiom::N3 | Axiom::N4 | Axiom::N5 | Axiom::C1)
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Axiom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axiom::ALL
            .into_iter()
            .find(|a| a.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownAxiom(s.to_string()))
    }
}

/// Anything that evaluates a batch of vectors to scalars.
pub trait BatchNorm: Sync {
    fn dim(&self) -> usize;
    fn norms(&self, z: &Tensor) -> Result<Vec<f64>>;
}

/// Anything that evaluates row-aligned pairs to distances.
pub trait BatchDistance: Sync {
    fn dim(&self) -> usize;
    fn distances(&self, xs: &Tensor, ys: &Tensor) -> Result<Vec<f64>>;
}

impl BatchNorm for NormModel {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn norms(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.eval_batch(z)
    }
}

impl BatchDistance for DistanceModel {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn distances(&self, xs: &Tensor, ys: &Tensor) -> Result<Vec<f64>> {
        DistanceModel::distances(self, xs, ys)
    }
}

/// What an axiom is checked against. Metric axioms on a norm use the
/// induced distance `d(x, y) = |y − x|`.
#[derive(Clone, Copy)]
pub enum Target<'a> {
    Norm(&'a dyn BatchNorm),
    Distance(&'a dyn BatchDistance),
}

impl Target<'_> {
    fn dim(&self) -> usize {
        match self {
            Target::Norm(n) => n.dim(),
            Target::Distance(d) => d.dim(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Target::Norm(_) => "norm",
            Target::Distance(_) => "distance",
        }
    }

    fn norm(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Target::Norm(n) => chunked(rows, |t| n.norms(t)),
            Target::Distance(_) => unreachable!("norm axioms are rejected for distance targets"),
        }
    }

    fn dist(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Target::Norm(n) => {
                let diffs: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| y.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
                chunked(&diffs, |t| n.norms(t))
            }
            Target::Distance(d) => {
                let dim = d.dim();
                let parts: Vec<Vec<f64>> = xs
                    .par_chunks(CHUNK)
                    .zip(ys.par_chunks(CHUNK))
                    .map(|(a, b)| d.distances(&to_tensor(a, dim), &to_tensor(b, dim)))
                    .collect::<Result<_>>()?;
                Ok(parts.concat())
            }
        }
    }
}

const CHUNK: usize = 1024;

fn to_tensor(rows: &[Vec<f64>], dim: usize) -> Tensor {
    Tensor::new(vec![rows.len(), dim], rows.concat()).expect("finite samples")
}

fn chunked(rows: &[Vec<f64>], f: impl Fn(&Tensor) -> Result<Vec<f64>> + Sync) -> Result<Vec<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    let parts: Vec<Vec<f64>> = rows.par_chunks(CHUNK).map(|c| f(&to_tensor(c, dim))).collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Distribution of sampled input vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Gaussian { scale: f64 },
    Uniform { low: f64, high: f64 },
    /// Integers in `0..count`, for table embeddings.
    Index { count: usize },
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        (0..dim)
            .map(|_| match *self {
                Sampler::Gaussian { scale } => {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                }
                Sampler::Uniform { low, high } => rng.random_range(low..high),
                Sampler::Index { count } => rng.random_range(0..count) as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: Axiom,
    pub samples: usize,
    pub violations: usize,
    /// Largest relative violation seen (0 when none).
    pub worst: f64,
    pub tolerance: f64,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Writes one JSON object per report, newline separated.
pub fn write_json_lines<W: std::io::Write>(reports: &[AxiomReport], mut w: W) -> Result<()> {
    for r in reports {
        writeln!(w, "{}", r.to_json_line())?;
    }
    Ok(())
}

struct Tally {
    violations: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { violations: 0, worst: 0.0 }
    }

    /// Records `lhs <= rhs` with the excess normalized by `max(1, |rhs|)`.
    fn le(&mut self, lhs: f64, rhs: f64, tol: f64) {
        self.excess((lhs - rhs) / rhs.abs().max(1.0), tol);
    }

    fn eq(&mut self, lhs: f64, rhs: f64, tol: f64) {
        self.excess((lhs - rhs).abs() / rhs.abs().max(1.0), tol);
    }

    fn excess(&mut self, v: f64, tol: f64) {
        if v > tol || v.is_nan() {
            self.violations += 1;
        }
        if v > self.worst || v.is_nan() {
            self.worst = if v.is_nan() { f64::INFINITY } else { v };
        }
    }
}

const HOMOGENEITY_SCALES: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 10.0];

/// Samples the quantified statement of `axiom` `n_samples` times.
///
/// Deterministic for a fixed `seed`. N2 is checked at every scale in
/// `{0, 0.5, 1, 2, 10}` per sample; each failing sample counts once.
pub fn check_axiom(target: Target<'_>, axiom: Axiom, sampler: &Sampler, n_samples: usize, tol: f64, seed: u64) -> Result<AxiomReport> {
    if axiom.is_norm_axiom() && matches!(target, Target::Distance(_)) {
        return Err(Error::AxiomTarget { axiom: axiom.id(), target: target.kind() });
    }
    if matches!(sampler, Sampler::Index { .. }) && matches!(target, Target::Norm(_)) {
        return Err(Error::InvalidConfig("index sampler only applies to distance targets".into()));
    }
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<Vec<f64>> { (0..count).map(|_| sampler.draw(dim, &mut rng)).collect() };
    let n = n_samples;
    let mut t = Tally::new();
    match axiom {
        Axiom::M1 => {
            let (x, y) = (draw(n), draw(n));
            for d in target.dist(&x, &y)? {
                t.le(0.0, d, tol);
            }
        }
        Axiom::M2 => {
            let (x, y) = (draw(n), draw(n));
            let same = target.dist(&x, &x)?;
            let diff = target.dist(&x, &y)?;
            for i in 0..n {
                let mut bad = Tally::new();
                bad.eq(same[i], 0.0, tol);
                if x[i] != y[i] && !(diff[i] > 0.0) {
                    bad.excess(f64::INFINITY, tol);
                }
                merge(&mut t, bad);
            }
        }
        Axiom::M3 => {
            let (x, y, z) = (draw(n), draw(n), draw(n));
            let (xz, xy, yz) = (target.dist(&x, &z)?, target.dist(&x, &y)?, target.dist(&y, &z)?);
            for i in 0..n {
                t.le(xz[i], xy[i] + yz[i], tol);
            }
        }
        Axiom::M4 => {
            let (x, y) = (draw(n), draw(n));
            let (a, b) = (target.dist(&x, &y)?, target.dist(&y, &x)?);
            for i in 0..n {
                t.eq(a[i], b[i], tol);
            }
        }
        Axiom::N1 => {
            let x = draw(n);
            let zero = target.norm(&[vec![0.0; dim]])?[0];
            t.eq(zero, 0.0, tol);
            let v = target.norm(&x)?;
            for (xi, vi) in x.iter().zip(v) {
                let l2 = xi.iter().map(|a| a * a).sum::<f64>().sqrt();
                if l2 > 0.0 && vi < tol * l2 {
                    t.excess(f64::INFINITY, tol);
                }
            }
        }
        Axiom::N2 => {
            let x = draw(n);
            let base = target.norm(&x)?;
            let mut per_sample: Vec<Tally> = (0..n).map(|_| Tally::new()).collect();
            for a in HOMOGENEITY_SCALES {
                let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| a * v).collect()).collect();
                for (i, v) in target.norm(&scaled)?.into_iter().enumerate() {
                    per_sample[i].eq(v, a * base[i], tol);
                }
            }
            for s in per_sample {
                merge(&mut t, s);
            }
        }
        Axiom::N3 => {
            let (x, y) = (draw(n), draw(n));
            let sum: Vec<Vec<f64>> = x.iter().zip(&y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
            let (nx, ny, ns) = (target.norm(&x)?, target.norm(&y)?, target.norm(&sum)?);
            for i in 0..n {
                t.le(ns[i], nx[i] + ny[i], tol);
            }
        }
        Axiom::N4 => {
            let x = draw(n);
            let neg: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
            let (a, b) = (target.norm(&x)?, target.norm(&neg)?);
            for i in 0..n {
                t.eq(a[i], b[i], tol);
            }
        }
        Axiom::N5 => {
            let (x, dx) = (draw(n), draw(n));
            let lo: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
            let hi: Vec<Vec<f64>> = lo.iter().zip(&dx).map(|(a, d)| a.iter().zip(d).map(|(p, q)| p + q.abs()).collect()).collect();
            let (a, b) = (target.norm(&lo)?, target.norm(&hi)?);
            for i in 0..n {
                t.le(a[i], b[i], tol);
            }
        }
        Axiom::C1 => {
            let (x, y) = (draw(n), draw(n));
            let lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let mix: Vec<Vec<f64>> = x
                .iter()
                .zip(&y)
                .zip(&lambdas)
                .map(|((a, b), &l)| a.iter().zip(b).map(|(p, q)| l * p + (1.0 - l) * q).collect())
                .collect();
            let (nx, ny, nm) = (target.norm(&x)?, target.norm(&y)?, target.norm(&mix)?);
            for i in 0..n {
                t.le(nm[i], lambdas[i] * nx[i] + (1.0 - lambdas[i]) * ny[i], tol);
            }
        }
    }
    Ok(AxiomReport { axiom, samples: n, violations: t.violations, worst: t.worst, tolerance: tol })
}

fn merge(total: &mut Tally, sample: Tally) {
    if sample.violations > 0 {
        total.violations += 1;
    }
    total.worst = total.worst.max(sample.worst);
}

/// The head of a distance model, as a function of embedding differences.
pub struct HeadNorm<'a>(pub &'a DistanceModel);

impl BatchNorm for HeadNorm<'_> {
    fn dim(&self) -> usize {
        self.0.head().input_dim()
    }

    fn norms(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut tape = crate::diffcore::Tape::new();
        let x = tape.input(z.clone());
        let out = self.0.head().forward(&mut tape, self.0.params(), x)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Axioms a head satisfies for every parameter setting: non-negativity (M1
/// on the induced distance), subadditivity, and homogeneity, convexity and
/// symmetry where the architecture provides them.
pub fn guaranteed_axioms(spec: &HeadSpec) -> Vec<Axiom> {
    let mut out = Vec::new();
    if spec.induces_metric() {
        out.extend([Axiom::M1, Axiom::N3, Axiom::M3]);
    }
    if spec.is_norm() {
        out.push(Axiom::N2);
    }
    if spec.is_convex() {
        out.push(Axiom::C1);
    }
    if spec.is_symmetric() {
        out.push(Axiom::N4);
    }
    out
}

/// Runs every guaranteed axiom on Gaussian samples.
pub fn check_guarantees(norm: &dyn BatchNorm, spec: &HeadSpec, n_samples: usize, tol: f64, seed: u64) -> Result<Vec<AxiomReport>> {
    let sampler = Sampler::Gaussian { scale: 1.0 };
    guaranteed_axioms(spec)
        .into_iter()
        .map(|a| check_axiom(Target::Norm(norm), a, &sampler, n_samples, tol, seed))
        .collect()
}

/// Total violations of the trained head's guarantees.
pub fn head_guarantee_violations(model: &DistanceModel, n_samples: usize, seed: u64) -> Result<usize> {
    let reports = check_guarantees(&HeadNorm(model), &model.spec().head, n_samples, DEFAULT_TOL, seed)?;
    Ok(reports.iter().map(|r| r.violations).sum())
}

pub const DEFAULT_TOL: f64 = 1e-9;

/// One head of every family at input dimension `dim`: Deep Norms with both
/// activations, Wide Norms with both flags, neural metrics over each, the
/// symmetrizing and definite wrappers, and the Euclidean and Mahalanobis
/// baselines.
pub fn reference_heads(dim: usize) -> Vec<(String, HeadSpec)> {
    use crate::norms::{make_definite, symmetrize, Activation, DeepNormSpec, NeuralMetricSpec, Pooling, WideNormSpec};
    let deep = |activation, pooling| HeadSpec::DeepNorm(DeepNormSpec { input_dim: dim, widths: vec![32, 32], activation, pooling });
    let wide = |asymmetric| {
        HeadSpec::WideNorm(WideNormSpec { input_dim: dim, components: 16, component_dim: 8, asymmetric, pooling: Pooling::MaxMean })
    };
    let neural = |base| HeadSpec::NeuralMetric(NeuralMetricSpec { base: Box::new(base), pieces: 5, pooling: Pooling::MaxMean });
    let definite = |spec| make_definite(spec, 0.1).expect("positive lambda");
    vec![
        ("deepnorm_relu".into(), deep(Activation::Relu, Pooling::Mean)),
        ("deepnorm_maxrelu".into(), deep(Activation::MaxRelu, Pooling::MaxMean)),
        ("widenorm".into(), wide(false)),
        ("widenorm_asym".into(), wide(true)),
        ("nm_deepnorm".into(), neural(deep(Activation::MaxRelu, Pooling::Mean))),
        ("nm_widenorm".into(), neural(wide(true))),
        ("symmetrized_deepnorm".into(), symmetrize(deep(Activation::MaxRelu, Pooling::MaxMean))),
        ("symmetrized_widenorm_asym".into(), symmetrize(wide(true))),
        ("definite_deepnorm".into(), definite(deep(Activation::Relu, Pooling::Mean))),
        ("definite_widenorm_asym".into(), definite(wide(true))),
        ("euclidean".into(), HeadSpec::Euclidean { input_dim: dim }),
        ("mahalanobis".into(), HeadSpec::Mahalanobis { input_dim: dim, rows: dim }),
    ]
}

/// Exhaustive count of ordered triples of distinct indices with
/// `M[i][k] > M[i][j] + M[j][k] + tol`.
pub fn count_triangle_violations(m: &DistanceMatrix, tol: f64) -> Result<u64> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.n();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut count = 0u64;
            for j in (0..n).filter(|&j| j != i) {
                let mij = m.get(i, j);
                let row_j = m.row(j);
                for (k, (&mik, &mjk)) in m.row(i).iter().zip(row_j).enumerate() {
                    if k != i && k != j && mik > mij + mjk + tol {
                        count += 1;
                    }
                }
            }
            count
        })
        .sum())
}
