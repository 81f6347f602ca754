//! Metric nearness: repair a non-metric matrix with minimal L2 distortion,
//! either by triangle fixing or by fitting a neural metric over item indices.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::axioms::count_triangle_violations;
use crate::error::{Error, Result};
use crate::graphdist::Graph;
use crate::metrics::{fit, pairwise_naive, DistanceMatrix, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode, PairSet, Schedule};
use crate::norms::{Activation, DeepNormSpec, HeadSpec, NeuralMetricSpec, Pooling, WideNormSpec};
use crate::seeds;

/// Absolute slack used when counting triangle violations of a solution.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct NearnessProblem {
    pub d: DistanceMatrix,
    pub symmetric: bool,
    pub seed: u64,
    /// Shortest-path distances before noise (asymmetric generator only).
    pub clean: Option<DistanceMatrix>,
    /// Noisy distances before the mod-10 rescaling (asymmetric generator only).
    pub raw: Option<DistanceMatrix>,
}

impl NearnessProblem {
    pub fn new(d: DistanceMatrix, symmetric: bool, seed: u64) -> Result<Self> {
        check_input(&d, symmetric)?;
        let mut d = d;
        d.set_symmetric_mode(symmetric);
        Ok(Self { d, symmetric, seed, clean: None, raw: None })
    }

    pub fn n(&self) -> usize {
        self.d.n()
    }
}

fn check_input(d: &DistanceMatrix, symmetric: bool) -> Result<()> {
    if !d.is_square() {
        return Err(Error::NotSquare { rows: d.rows(), cols: d.cols() });
    }
    if d.max_abs_diagonal() != 0.0 {
        return Err(Error::InvalidConfig("nearness input needs a zero diagonal".into()));
    }
    if d.min_value() < 0.0 || d.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("nearness input must be finite and non-negative".into()));
    }
    if symmetric && d.max_asymmetry() != 0.0 {
        return Err(Error::InvalidConfig("symmetric nearness input is not symmetric".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearnessSolver {
    Tf,
    Eucl,
    Wn,
    Dn,
}

impl NearnessSolver {
    pub const ALL: [NearnessSolver; 4] = [NearnessSolver::Tf, NearnessSolver::Eucl, NearnessSolver::Wn, NearnessSolver::Dn];

    pub fn name(self) -> &'static str {
        match self {
            NearnessSolver::Tf => "tf",
            NearnessSolver::Eucl => "eucl",
            NearnessSolver::Wn => "wn",
            NearnessSolver::Dn => "dn",
        }
    }
}

impl fmt::Display for NearnessSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NearnessSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NearnessSolver::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown nearness solver '{s}' (tf, eucl, wn, dn)")))
    }
}

#[derive(Debug, Clone)]
pub struct NearnessSolution {
    pub x: DistanceMatrix,
    pub distortion: f64,
    pub violations: u64,
    pub tolerance: f64,
    pub solver: NearnessSolver,
    /// Sweeps for triangle fixing, epochs for neural solvers.
    pub iterations: usize,
    pub converged: bool,
    /// Per-epoch training loss (neural solvers only).
    pub losses: Vec<f64>,
}

impl NearnessSolution {
    /// `‖X − D‖₂² / ‖D‖₂²`, the scale benchmark tables usually report.
    pub fn squared_distortion(&self) -> f64 {
        self.distortion * self.distortion
    }
}

/// `‖X − D‖₂ / ‖D‖₂` over all entries.
pub fn distortion(x: &DistanceMatrix, d: &DistanceMatrix) -> Result<f64> {
    if x.rows() != d.rows() || x.cols() != d.cols() {
        return Err(Error::Dimension { what: "distortion operands", expected: d.values().len(), got: x.values().len() });
    }
    let den = d.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Degenerate("distortion is undefined for a zero data matrix".into()));
    }
    let num = x.values().iter().zip(d.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `A + Aᵀ + E` with `A ~ U(0, 5)` and symmetric noise `E ~ U(0, 1)`, zero diagonal.
pub fn generate_symmetric(n: usize, seed: u64) -> Result<NearnessProblem> {
    if n < 3 {
        return Err(Error::InvalidConfig(format!("nearness problems need n >= 3, got {n}")));
    }
    let mut rng = seeds::stream(seed, "nearness/symmetric");
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut d = DistanceMatrix::zeros(n, true);
    for i in 0..n {
        for j in i + 1..n {
            let noise: f64 = rng.random_range(0.0..1.0);
            let v = a[i * n + j] + a[j * n + i] + noise;
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    NearnessProblem::new(d, true, seed)
}

/// Side length of the smallest square lattice holding `n` nodes.
pub fn lattice_side(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s < n {
        s += 1;
    }
    s
}

/// Shortest paths among the first `n` nodes of a directed 4-neighbour lattice
/// with weights `exp(U(−1, 1))`, plus `U(0, 4)` noise, taken mod 10.
pub fn generate_asymmetric(n: usize, seed: u64) -> Result<NearnessProblem> {
    if n < 3 {
        return Err(Error::InvalidConfig(format!("nearness problems need n >= 3, got {n}")));
    }
    let mut rng = seeds::stream(seed, "nearness/asymmetric");
    let side = lattice_side(n);
    let mut g = Graph::new(side * side, true);
    for r in 0..side {
        for c in 0..side {
            let v = r * side + c;
            if c + 1 < side {
                g.add_edge(v, v + 1, rng.random_range(-1.0f64..1.0).exp())?;
                g.add_edge(v + 1, v, rng.random_range(-1.0f64..1.0).exp())?;
            }
            if r + 1 < side {
                g.add_edge(v, v + side, rng.random_range(-1.0f64..1.0).exp())?;
                g.add_edge(v + side, v, rng.random_range(-1.0f64..1.0).exp())?;
            }
        }
    }
    let sources: Vec<usize> = (0..n).collect();
    let rows = g.distances_from(&sources);
    let mut clean = DistanceMatrix::zeros(n, false);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n {
            if !row[j].is_finite() {
                return Err(Error::Unreachable { from: i, to: j });
            }
            clean.set(i, j, row[j]);
        }
    }
    let mut raw = clean.clone();
    let mut d = DistanceMatrix::zeros(n, false);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let v = clean.get(i, j) + rng.random_range(0.0..4.0);
            raw.set(i, j, v);
            d.set(i, j, v % 10.0);
        }
    }
    let mut p = NearnessProblem::new(d, false, seed)?;
    p.clean = Some(clean);
    p.raw = Some(raw);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriangleFixing {
    pub max_iters: usize,
    /// Stop once no entry moves by more than this within a sweep.
    pub tol: f64,
}

impl Default for TriangleFixing {
    fn default() -> Self {
        Self { max_iters: 400, tol: 1e-10 }
    }
}

/// Dykstra projection onto the triangle constraints `x_ik <= x_ij + x_jk`.
///
/// Constraints are visited in lexicographic `(i, j, k)` order; symmetric
/// problems visit each unordered constraint once (`i < k`) and keep both
/// orientations equal. Entries are clipped at 0 after every sweep.
pub fn triangle_fix(problem: &NearnessProblem, opts: TriangleFixing) -> Result<NearnessSolution> {
    check_input(&problem.d, problem.symmetric)?;
    let n = problem.n();
    let mut x = problem.d.values().to_vec();
    let per_i = if problem.symmetric { 0 } else { (n - 1) * (n - 2) };
    let count = if problem.symmetric { n * (n - 1) / 2 * n.saturating_sub(2) } else { n * per_i };
    let mut z = vec![0.0; count];
    let mut before = x.clone();
    let (mut iterations, mut converged) = (0, false);
    while iterations < opts.max_iters {
        before.copy_from_slice(&x);
        if problem.symmetric {
            sweep_symmetric(&mut x, &mut z, n);
        } else {
            sweep_asymmetric(&mut x, &mut z, n);
        }
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        iterations += 1;
        let change = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let x = DistanceMatrix::new(n, n, x, problem.symmetric)?;
    Ok(NearnessSolution {
        distortion: distortion(&x, &problem.d)?,
        violations: count_triangle_violations(&x, VIOLATION_TOL)?,
        tolerance: VIOLATION_TOL,
        x,
        solver: NearnessSolver::Tf,
        iterations,
        converged,
        losses: Vec::new(),
    })
}

#[inline]
fn project(x: &mut [f64], z: &mut f64, ik: usize, ij: usize, jk: usize) {
    let v = x[ik] - x[ij] - x[jk];
    let delta = (v / 3.0).max(-*z);
    if delta != 0.0 {
        *z += delta;
        x[ik] -= delta;
        x[ij] += delta;
        x[jk] += delta;
    }
}

/// Works on the upper triangle and mirrors it once the sweep ends.
fn sweep_symmetric(x: &mut [f64], z: &mut [f64], n: usize) {
    let up = |a: usize, b: usize| if a < b { a * n + b } else { b * n + a };
    let mut c = 0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let ij = up(i, j);
            for k in i + 1..n {
                if k == j {
                    continue;
                }
                project(x, &mut z[c], i * n + k, ij, up(j, k));
                c += 1;
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            x[j * n + i] = x[i * n + j];
        }
    }
}

fn sweep_asymmetric(x: &mut [f64], z: &mut [f64], n: usize) {
    let mut c = 0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                project(x, &mut z[c], i * n + k, i * n + j, j * n + k);
                c += 1;
            }
        }
    }
}

/// Architecture and schedule for the neural solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralNearness {
    pub embed_dim: usize,
    pub euclidean_embed_dim: usize,
    pub deep_widths: Vec<usize>,
    pub wide_components: usize,
    pub wide_component_dim: usize,
    pub pieces: usize,
    pub schedule: Schedule,
}

impl Default for NeuralNearness {
    fn default() -> Self {
        Self::full()
    }
}

impl NeuralNearness {
    /// 512-d embeddings, 1500 epochs at rates 1e-3, 3e-4, 1e-4 in 500-epoch chunks.
    pub fn full() -> Self {
        Self {
            embed_dim: 512,
            euclidean_embed_dim: 1024,
            deep_widths: vec![512, 512],
            wide_components: 128,
            wide_component_dim: 48,
            pieces: 5,
            schedule: Schedule { epochs: 1500, batch_size: 1000, lr: 1e-3, milestones: vec![(500, 3e-4), (1000, 1e-4)] },
        }
    }

    /// Narrower networks for n = 50 instances.
    pub fn desk() -> Self {
        Self {
            embed_dim: 128,
            euclidean_embed_dim: 256,
            deep_widths: vec![128, 128],
            wide_components: 32,
            wide_component_dim: 16,
            ..Self::full()
        }
    }

    pub fn spec(&self, solver: NearnessSolver, n: usize, symmetric: bool) -> Result<DistanceSpec> {
        let table = |dim| EmbeddingSpec::Table { count: n, dim };
        let neural = |base: HeadSpec| {
            HeadSpec::NeuralMetric(NeuralMetricSpec { base: Box::new(base), pieces: self.pieces, pooling: Pooling::MaxMean })
        };
        let e = self.embed_dim;
        let (embedding, head) = match solver {
            NearnessSolver::Tf => return Err(Error::InvalidConfig("triangle fixing is not a neural solver".into())),
            NearnessSolver::Eucl => {
                (table(self.euclidean_embed_dim), HeadSpec::Euclidean { input_dim: self.euclidean_embed_dim })
            }
            NearnessSolver::Wn => (
                table(e),
                neural(HeadSpec::WideNorm(WideNormSpec {
                    input_dim: e,
                    components: self.wide_components,
                    component_dim: self.wide_component_dim,
                    asymmetric: !symmetric,
                    pooling: Pooling::Mean,
                })),
            ),
            NearnessSolver::Dn => (
                table(e),
                neural(HeadSpec::DeepNorm(DeepNormSpec {
                    input_dim: e,
                    widths: self.deep_widths.clone(),
                    activation: Activation::MaxRelu,
                    pooling: Pooling::Mean,
                })),
            ),
        };
        Ok(DistanceSpec { embedding, head, mode: PairMode::Metric })
    }
}

/// All ordered off-diagonal pairs of the problem as index pairs.
pub fn nearness_pairs(problem: &NearnessProblem) -> Result<PairSet> {
    let n = problem.n();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let targets = pairs.iter().map(|&(i, j)| problem.d.get(i, j)).collect();
    PairSet::new(PairSet::index_points(n), pairs, targets)
}

pub fn train_neural_nearness(
    problem: &NearnessProblem,
    solver: NearnessSolver,
    cfg: &NeuralNearness,
    seed: u64,
) -> Result<(NearnessSolution, DistanceModel)> {
    if solver == NearnessSolver::Tf {
        return Err(Error::InvalidConfig("use triangle_fix for the tf solver".into()));
    }
    let n = problem.n();
    let spec = cfg.spec(solver, n, problem.symmetric)?;
    let mut model = DistanceModel::new(spec, &mut seeds::stream(seed, &format!("nearness/init/{solver}")))?;
    let data = nearness_pairs(problem)?;
    let losses = fit(&mut model, &data, &cfg.schedule, &mut seeds::stream(seed, "nearness/shuffle"), |_, _, _| Ok(()))?;
    let idx = PairSet::index_points(n);
    let mut x = pairwise_naive(&model, &idx, &idx)?;
    x.set_symmetric_mode(false);
    for i in 0..n {
        x.set(i, i, 0.0);
    }
    let solution = NearnessSolution {
        distortion: distortion(&x, &problem.d)?,
        violations: count_triangle_violations(&x, VIOLATION_TOL)?,
        tolerance: VIOLATION_TOL,
        x,
        solver,
        iterations: losses.len(),
        converged: true,
        losses,
    };
    Ok((solution, model))
}

/// Runs any solver on the problem.
pub fn solve(
    problem: &NearnessProblem,
    solver: NearnessSolver,
    tf: TriangleFixing,
    neural: &NeuralNearness,
    seed: u64,
) -> Result<NearnessSolution> {
    match solver {
        NearnessSolver::Tf => triangle_fix(problem, tf),
        _ => Ok(train_neural_nearness(problem, solver, neural, seed)?.0),
    }
}
