//! Random 2D norms from convex hulls: ground truth, datasets, training and
//! norm-ball contours.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::axioms::BatchNorm;
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{fit, DistanceModel, DistanceSpec, EmbeddingSpec, PairMode, PairSet, Schedule};
use crate::norms::{Activation, DeepNormSpec, HeadSpec, MlpSpec, Pooling, WideNormSpec};

pub type Point = [f64; 2];

/// Convex polygon containing the origin, read as the unit ball of a norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HullNorm {
    vertices: Vec<Point>,
    symmetric: bool,
    /// Edge `k` lies on `{p : n·p = 1}`, scaled so the offset is one.
    normals: Vec<Point>,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

impl HullNorm {
    /// Hull of `points`; fails unless the origin is strictly inside.
    pub fn from_points(points: &[Point], symmetric: bool) -> Result<Self> {
        let vertices = convex_hull(points);
        if vertices.len() < 3 {
            return Err(Error::Degenerate("hull has fewer than three vertices".into()));
        }
        let scale = vertices.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
        let mut normals = Vec::with_capacity(vertices.len());
        for k in 0..vertices.len() {
            let (a, b) = (vertices[k], vertices[(k + 1) % vertices.len()]);
            // Outward normal of a counterclockwise edge.
            let n = [b[1] - a[1], a[0] - b[0]];
            let c = n[0] * a[0] + n[1] * a[1];
            let len = n[0].hypot(n[1]);
            if c <= 1e-9 * len * scale {
                return Err(Error::Degenerate("origin is not strictly inside the hull".into()));
            }
            normals.push([n[0] / c, n[1] / c]);
        }
        Ok(Self { vertices, symmetric, normals })
    }

    /// `L∞` ball: vertices `(±1, ±1)`.
    pub fn square() -> Self {
        Self::from_points(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]], true).expect("valid square")
    }

    /// `L1` ball: vertices `(±1, 0), (0, ±1)`.
    pub fn diamond() -> Self {
        Self::from_points(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], true).expect("valid diamond")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Minkowski gauge `inf{a > 0 : x / a ∈ hull}`.
    ///
    /// For a polygon with the origin inside this is the largest `n_k·x` over
    /// edges, the scale at which the ray through `x` leaves the polygon.
    pub fn gauge(&self, x: Point) -> f64 {
        self.normals.iter().map(|n| n[0] * x[0] + n[1] * x[1]).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y"])?;
        for v in &self.vertices {
            out.write_record([format!("{:.16e}", v[0]), format!("{:.16e}", v[1])])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl BatchNorm for HullNorm {
    fn dim(&self) -> usize {
        2
    }

    fn norms(&self, z: &Tensor) -> Result<Vec<f64>> {
        if z.cols() != 2 {
            return Err(Error::Dimension { what: "gauge input", expected: 2, got: z.cols() });
        }
        Ok(z.data().chunks_exact(2).map(|p| self.gauge([p[0], p[1]])).collect())
    }
}

pub fn gauge(hull: &HullNorm, x: Point) -> f64 {
    hull.gauge(x)
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

fn hull_attempt<R: Rng + ?Sized>(rng: &mut R, symmetric: bool) -> Result<HullNorm> {
    let clusters = rng.random_range(3..=10);
    let mut points: Vec<Point> = Vec::new();
    for _ in 0..clusters {
        let count = rng.random_range(5..=50);
        let mu = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let sigma = rng.random_range(0.2..0.6);
        for _ in 0..count {
            points.push([mu[0] + sigma * truncated_normal(rng), mu[1] + sigma * truncated_normal(rng)]);
        }
    }
    if symmetric {
        points.retain(|p| p[0] > 0.0);
        let reflected: Vec<Point> = points.iter().map(|p| [-p[0], -p[1]]).collect();
        points.extend(reflected);
    }
    let n = points.len().max(1) as f64;
    let mean = points.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
    for p in &mut points {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
    HullNorm::from_points(&points, symmetric)
}

/// Random hull from 3–10 truncated-normal clusters, recentred to mean zero.
/// Symmetric hulls keep the `x > 0` points and add their reflections.
pub fn generate_hull(seed: u64, symmetric: bool) -> Result<HullNorm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..10 {
        match hull_attempt(&mut rng, symmetric) {
            Ok(h) => return Ok(h),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Degenerate("hull generation failed".into())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDataset {
    /// Unit-ball points, target 1.
    pub test: Vec<Point>,
    /// Index into `test` of each training direction.
    pub train_index: Vec<usize>,
    pub train: Vec<(Point, f64)>,
}

pub const TEST_POINTS: usize = 500;

/// 500 boundary points in random directions; `train_size` of them scaled by
/// `U(0.85, 1.15)` with the factor as target.
pub fn sample_dataset(hull: &HullNorm, train_size: usize, seed: u64) -> Result<NormDataset> {
    if train_size == 0 || train_size > TEST_POINTS {
        return Err(Error::InvalidConfig(format!("train size must be in 1..={TEST_POINTS}, got {train_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test: Vec<Point> = (0..TEST_POINTS)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..TAU);
            let u = [t.cos(), t.sin()];
            let g = hull.gauge(u);
            [u[0] / g, u[1] / g]
        })
        .collect();
    let train_index: Vec<usize> = index::sample(&mut rng, TEST_POINTS, train_size).into_vec();
    let train = train_index
        .iter()
        .map(|&i| {
            let eta = rng.random_range(0.85..1.15);
            ([test[i][0] * eta, test[i][1] * eta], eta)
        })
        .collect();
    Ok(NormDataset { test, train_index, train })
}

impl NormDataset {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["split", "x", "y", "target"])?;
        for p in &self.test {
            out.write_record(["test".to_string(), format!("{:.16e}", p[0]), format!("{:.16e}", p[1]), "1".into()])?;
        }
        for (p, t) in &self.train {
            out.write_record(["train".to_string(), format!("{:.16e}", p[0]), format!("{:.16e}", p[1]), format!("{t:.16e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    fn pair_set(points: impl Iterator<Item = (Point, f64)>) -> Result<PairSet> {
        let mut rows = vec![0.0, 0.0];
        let mut pairs = Vec::new();
        let mut targets = Vec::new();
        for (k, (p, t)) in points.enumerate() {
            rows.extend_from_slice(&p);
            pairs.push((0, k + 1));
            targets.push(t);
        }
        PairSet::new(Tensor::new(vec![pairs.len() + 1, 2], rows)?, pairs, targets)
    }

    /// Pairs `(origin, p)` so that `d(0, p) = |p|`.
    pub fn train_pairs(&self) -> Result<PairSet> {
        Self::pair_set(self.train.iter().copied())
    }

    pub fn test_pairs(&self) -> Result<PairSet> {
        Self::pair_set(self.test.iter().map(|&p| (p, 1.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm2dModel {
    Maha,
    Deepnorm,
    Widenorm,
    Mlp,
}

impl std::str::FromStr for Norm2dModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maha" | "mahalanobis" => Ok(Self::Maha),
            "deepnorm" | "deep_norm" => Ok(Self::Deepnorm),
            "widenorm" | "wide_norm" => Ok(Self::Widenorm),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown norm2d model '{other}'"))),
        }
    }
}

/// Head used for each model kind. Wide norms over asymmetric hulls use the
/// lifted asymmetric form.
pub fn norm2d_head(kind: Norm2dModel, symmetric_target: bool) -> HeadSpec {
    match kind {
        Norm2dModel::Maha => HeadSpec::Mahalanobis { input_dim: 2, rows: 2 },
        Norm2dModel::Deepnorm => HeadSpec::DeepNorm(DeepNormSpec {
            input_dim: 2,
            widths: vec![50, 50],
            activation: Activation::MaxRelu,
            pooling: Pooling::MaxMean,
        }),
        Norm2dModel::Widenorm => HeadSpec::WideNorm(WideNormSpec {
            input_dim: 2,
            components: 10,
            component_dim: 2,
            asymmetric: !symmetric_target,
            pooling: Pooling::MaxMean,
        }),
        Norm2dModel::Mlp => HeadSpec::Mlp(MlpSpec { input_dim: 2, widths: vec![50, 50] }),
    }
}

pub fn norm2d_model<R: Rng + ?Sized>(head: HeadSpec, rng: &mut R) -> Result<DistanceModel> {
    DistanceModel::new(DistanceSpec { embedding: EmbeddingSpec::Identity { dim: 2 }, head, mode: PairMode::Metric }, rng)
}

/// `p ↦ d(0, p)` of a distance model over raw 2D points.
pub struct OriginNorm<'a>(pub &'a DistanceModel);

impl BatchNorm for OriginNorm<'_> {
    fn dim(&self) -> usize {
        self.0.input_dim()
    }

    fn norms(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.0.distances(&Tensor::zeros(z.shape()), z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norm2dOutcome {
    pub best_test_mse: f64,
    pub best_epoch: usize,
    /// `(epoch, train loss, test mse)` at each checkpoint.
    pub checkpoints: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Norm2dTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: usize,
}

impl Default for Norm2dTraining {
    fn default() -> Self {
        Self { epochs: 5000, batch_size: 16, lr: 1e-3, eval_every: 100 }
    }
}

/// Adam on the squared error of `|p|` against the perturbation factor.
/// The model is left at the checkpoint with the lowest test MSE.
pub fn train_norm2d<R: Rng + ?Sized>(
    model: &mut DistanceModel,
    data: &NormDataset,
    cfg: &Norm2dTraining,
    rng: &mut R,
) -> Result<Norm2dOutcome> {
    if data.train.is_empty() {
        return Err(Error::EmptyDataset("norm2d training set".into()));
    }
    let (train, test) = (data.train_pairs()?, data.test_pairs()?);
    let every = cfg.eval_every.max(1);
    let mut best: (f64, usize, Option<ParamStore>) = (test.mse(model)?, 0, Some(model.params().clone()));
    let mut checkpoints = vec![(0, f64::NAN, best.0)];
    let schedule = Schedule::constant(cfg.epochs, cfg.batch_size, cfg.lr);
    fit(model, &train, &schedule, rng, |epoch, loss, m| {
        let done = epoch + 1;
        if done % every == 0 || done == cfg.epochs {
            let mse = test.mse(m)?;
            checkpoints.push((done, loss, mse));
            if mse < best.0 {
                best = (mse, done, Some(m.params().clone()));
            }
        }
        Ok(())
    })?;
    if let Some(p) = best.2 {
        *model.params_mut() = p;
    }
    Ok(Norm2dOutcome { best_test_mse: best.0, best_epoch: best.1, checkpoints })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    /// One point per direction where the level was crossed.
    pub points: Vec<Point>,
}

pub const CONTOUR_DIRECTIONS: usize = 720;

/// Traces `{x : f(x) = level}` along `directions` rays from the origin.
///
/// Each ray is scanned outward to `max_radius` in `steps` increments; the
/// first bracketed crossing is refined by bisection to `1e-9` relative.
/// Rays without a crossing contribute nothing.
pub fn export_contours(
    norm: &dyn BatchNorm,
    levels: &[f64],
    directions: usize,
    max_radius: f64,
    steps: usize,
) -> Result<Vec<Contour>> {
    let dirs: Vec<Point> = (0..directions)
        .map(|k| {
            let t = TAU * k as f64 / directions as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let eval = |radii: &[f64]| -> Result<Vec<f64>> {
        let data: Vec<f64> = dirs.iter().zip(radii).flat_map(|(u, r)| [u[0] * r, u[1] * r]).collect();
        norm.norms(&Tensor::new(vec![dirs.len(), 2], data)?)
    };
    let mut scans = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let r = max_radius * s as f64 / steps as f64;
        scans.push(eval(&vec![r; dirs.len()])?);
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut lo = vec![f64::NAN; dirs.len()];
        let mut hi = vec![f64::NAN; dirs.len()];
        let mut below = vec![false; dirs.len()];
        for k in 0..dirs.len() {
            for s in 0..steps {
                let (a, b) = (scans[s][k] - level, scans[s + 1][k] - level);
                if (a < 0.0) != (b < 0.0) || b == 0.0 {
                    lo[k] = max_radius * s as f64 / steps as f64;
                    hi[k] = max_radius * (s + 1) as f64 / steps as f64;
                    below[k] = a < 0.0;
                    break;
                }
            }
        }
        while (0..dirs.len()).any(|k| lo[k].is_finite() && hi[k] - lo[k] > 1e-9 * hi[k].max(1e-12)) {
            let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| if a.is_finite() { 0.5 * (a + b) } else { 0.0 }).collect();
            let f = eval(&mid)?;
            for k in 0..dirs.len() {
                if !lo[k].is_finite() {
                    continue;
                }
                if (f[k] < level) == below[k] {
                    lo[k] = mid[k];
                } else {
                    hi[k] = mid[k];
                }
            }
        }
        let points = (0..dirs.len())
            .filter(|&k| lo[k].is_finite())
            .map(|k| {
                let r = 0.5 * (lo[k] + hi[k]);
                [dirs[k][0] * r, dirs[k][1] * r]
            })
            .collect();
        out.push(Contour { level, points });
    }
    Ok(out)
}

pub fn write_contours_csv<W: Write>(contours: &[Contour], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["level", "x", "y"])?;
    for c in contours {
        for p in &c.points {
            out.write_record([format!("{}", c.level), format!("{:.16e}", p[0]), format!("{:.16e}", p[1])])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    f(std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_examples() {
        assert!((HullNorm::square().gauge([0.5, 0.25]) - 0.5).abs() < 1e-15);
        assert!((HullNorm::diamond().gauge([0.5, 0.5]) - 1.0).abs() < 1e-15);
        let asym = HullNorm::from_points(&[[2.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], false).unwrap();
        assert!((asym.gauge([1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!((asym.gauge([-1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(asym.gauge([0.0, 0.0]), 0.0);
    }

    #[test]
    fn hull_rejects_outside_origin() {
        assert!(HullNorm::from_points(&[[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]], false).is_err());
        assert!(HullNorm::from_points(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], false).is_err());
    }

    #[test]
    fn hull_drops_interior_points() {
        let h = HullNorm::from_points(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [0.2, 0.1], [1.0, 0.0]], true).unwrap();
        assert_eq!(h.vertices().len(), 4);
    }

    #[test]
    fn euclidean_like_contours_scale() {
        let sq = HullNorm::square();
        let cs = export_contours(&sq, &[1.0, 2.0], 72, 5.0, 50).unwrap();
        for (a, b) in cs[0].points.iter().zip(&cs[1].points) {
            assert!((2.0 * a[0] - b[0]).abs() < 1e-6 && (2.0 * a[1] - b[1]).abs() < 1e-6);
            assert!((sq.gauge(*a) - 1.0).abs() < 1e-6);
        }
        assert_eq!(cs[0].points.len(), 72);
    }
}
