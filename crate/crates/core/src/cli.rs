//! Experiment runner: TOML configs, per-seed dispatch, JSON run reports and
//! consolidated comparison tables.
//!
//! Every section defaults to the reference recipe, so a config naming only
//! the experiment reproduces it. Each seed writes its artifacts to
//! `<out>/seed-<n>/` and the run summary goes to `<out>/report.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axioms::{self, check_guarantees, head_guarantee_violations, reference_heads, HeadNorm};
use crate::error::{Error, Result};
use crate::figure1::{run_figure1, Figure1Config};
use crate::graphdist::{run_graph_experiment, GraphExperiment};
use crate::gvf::{self, GvfExperiment};
use crate::metrics::DistanceModel;
use crate::nearness::{self, NearnessSolver, NeuralNearness, TriangleFixing};
use crate::norm2d::{self, HullNorm, Norm2dModel, Norm2dTraining};
use crate::norms::NormModel;
use crate::seeds;

pub const REPORT_FILE: &str = "report.json";

/// Samples per axiom when re-checking a trained head.
pub const TRAINED_AXIOM_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Norm2d,
    Nearness,
    Graph,
    Gvf,
    Axioms,
    Figure1,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Norm2d => "norm2d",
            ExperimentKind::Nearness => "nearness",
            ExperimentKind::Graph => "graph",
            ExperimentKind::Gvf => "gvf",
            ExperimentKind::Axioms => "axioms",
            ExperimentKind::Figure1 => "figure1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullChoice {
    Square,
    Diamond,
    /// `generate_hull` with the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Norm2dSection {
    pub model: Norm2dModel,
    pub hull: HullChoice,
    pub symmetric: bool,
    pub train_size: usize,
    pub training: Norm2dTraining,
    pub contour_levels: Vec<f64>,
}

impl Default for Norm2dSection {
    fn default() -> Self {
        Self {
            model: Norm2dModel::Deepnorm,
            hull: HullChoice::Random,
            symmetric: true,
            train_size: 128,
            training: Norm2dTraining::default(),
            contour_levels: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NearnessSection {
    pub n: usize,
    pub symmetric: bool,
    pub solvers: Vec<NearnessSolver>,
    pub triangle_fixing: TriangleFixing,
    pub neural: NeuralNearness,
}

impl Default for NearnessSection {
    fn default() -> Self {
        Self {
            n: 200,
            symmetric: true,
            solvers: NearnessSolver::ALL.to_vec(),
            triangle_fixing: TriangleFixing::default(),
            neural: NeuralNearness::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxiomsSection {
    pub dim: usize,
    pub samples: usize,
    pub tol: f64,
}

impl Default for AxiomsSection {
    fn default() -> Self {
        Self { dim: 8, samples: 10_000, tol: axioms::DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads for seeds and inner parallel loops (default: all cores).
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub norm2d: Norm2dSection,
    #[serde(default)]
    pub nearness: NearnessSection,
    #[serde(default)]
    pub graph: GraphExperiment,
    #[serde(default)]
    pub gvf: GvfExperiment,
    #[serde(default)]
    pub axioms: AxiomsSection,
    #[serde(default)]
    pub figure1: Figure1Config,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seeds: default_seeds(),
            out: default_out(),
            threads: None,
            norm2d: Norm2dSection::default(),
            nearness: NearnessSection::default(),
            graph: GraphExperiment::default(),
            gvf: GvfExperiment::default(),
            axioms: AxiomsSection::default(),
            figure1: Figure1Config::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("field `seeds` must list at least one seed".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("field `threads` must be positive".into()));
        }
        match self.experiment {
            ExperimentKind::Norm2d if self.norm2d.train_size == 0 || self.norm2d.train_size > norm2d::TEST_POINTS => {
                Err(Error::InvalidConfig(format!("field `norm2d.train_size` must be in 1..={}", norm2d::TEST_POINTS)))
            }
            ExperimentKind::Nearness if self.nearness.solvers.is_empty() => {
                Err(Error::InvalidConfig("field `nearness.solvers` must not be empty".into()))
            }
            ExperimentKind::Nearness if self.nearness.n < 3 => Err(Error::InvalidConfig("field `nearness.n` must be at least 3".into())),
            ExperimentKind::Graph => self.graph.schedule.validate(),
            ExperimentKind::Gvf if !(self.gvf.fraction > 0.0 && self.gvf.fraction <= 1.0) => {
                Err(Error::InvalidConfig(format!("field `gvf.fraction` must be in (0, 1], got {}", self.gvf.fraction)))
            }
            ExperimentKind::Gvf => self.gvf.td.validate(),
            ExperimentKind::Axioms if self.axioms.dim == 0 || self.axioms.samples == 0 => {
                Err(Error::InvalidConfig("fields `axioms.dim` and `axioms.samples` must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// FNV-1a of the experiment settings; output location and thread count
    /// do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.threads = None;
        let text = serde_json::to_string(&canon).expect("config serializes");
        format!("{:016x}", seeds::fnv1a64(text.as_bytes()))
    }

    /// Config dimensions used to join runs in a report.
    pub fn labels(&self) -> BTreeMap<String, String> {
        let mut l = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            l.insert(k.to_string(), v);
        };
        match self.experiment {
            ExperimentKind::Norm2d => {
                put("model", format!("{:?}", self.norm2d.model).to_lowercase());
                put("hull", format!("{:?}", self.norm2d.hull).to_lowercase());
                put("symmetric", self.norm2d.symmetric.to_string());
                put("train_size", self.norm2d.train_size.to_string());
            }
            ExperimentKind::Nearness => {
                put("n", self.nearness.n.to_string());
                put("mode", if self.nearness.symmetric { "symmetric" } else { "asymmetric" }.into());
            }
            ExperimentKind::Graph => {
                put("graph", self.graph.kind.to_string());
                put("model", self.graph.model.to_string());
                put("size", self.graph.size.to_string());
                put("train_size", self.graph.train_size.to_string());
            }
            ExperimentKind::Gvf => {
                put("env", self.gvf.env.to_string());
                put("asymmetric", self.gvf.asymmetric.to_string());
                put("head", self.gvf.head.to_string());
                put("split", format!("{:?}", self.gvf.split).to_lowercase());
                put("fraction", self.gvf.fraction.to_string());
            }
            ExperimentKind::Axioms => put("dim", self.axioms.dim.to_string()),
            ExperimentKind::Figure1 => {}
        }
        l
    }
}

pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub metrics: Metrics,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub labels: BTreeMap<String, String>,
    pub config_hash: String,
    pub version: String,
    pub wall_time_s: f64,
    pub seeds: Vec<SeedRecord>,
    /// Over the seeds that finished, per metric.
    pub aggregate: BTreeMap<String, Aggregate>,
}

impl RunReport {
    pub fn failed(&self) -> bool {
        self.seeds.iter().any(|s| s.error.is_some())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.is_dir() { dir.join(REPORT_FILE) } else { dir.to_path_buf() };
        let file = fs::File::open(&path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn aggregate(records: &[SeedRecord]) -> BTreeMap<String, Aggregate> {
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        for (k, v) in &r.metrics {
            columns.entry(k).or_default().push(*v);
        }
    }
    columns.into_iter().filter_map(|(k, v)| Some((k.to_string(), Aggregate::of(&v)?))).collect()
}

/// Runs every seed (bounded by `threads`), writes artifacts and `report.json`.
/// Seeds that fail are recorded with their error; the report is still written.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    fs::create_dir_all(&config.out)
        .map_err(|e| Error::InvalidConfig(format!("field `out`: cannot create {}: {e}", config.out.display())))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidConfig(format!("field `threads`: {e}")))?;
    let start = Instant::now();
    let seeds = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let t = Instant::now();
                let dir = config.out.join(format!("seed-{seed}"));
                let result = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| run_seed(config, seed, &dir));
                let (metrics, error) = match result {
                    Ok(m) => (m, None),
                    Err(e) => (Metrics::new(), Some(e.to_string())),
                };
                SeedRecord { seed, metrics, error, wall_time_s: t.elapsed().as_secs_f64() }
            })
            .collect::<Vec<_>>()
    });
    let report = RunReport {
        experiment: config.experiment,
        labels: config.labels(),
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        aggregate: aggregate(&seeds),
        seeds,
    };
    fs::write(config.out.join("config.toml"), config.to_toml()?)?;
    let file = fs::File::create(config.out.join(REPORT_FILE))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
    Ok(report)
}

/// One seed of the configured experiment; artifacts go to `dir`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Metrics> {
    match config.experiment {
        ExperimentKind::Norm2d => run_norm2d(&config.norm2d, seed, dir),
        ExperimentKind::Nearness => run_nearness(&config.nearness, seed, dir),
        ExperimentKind::Graph => run_graph(&config.graph, seed, dir),
        ExperimentKind::Gvf => run_gvf(&config.gvf, seed, dir),
        ExperimentKind::Axioms => run_axioms(&config.axioms, seed, dir),
        ExperimentKind::Figure1 => run_fig1(&config.figure1, seed, dir),
    }
}

fn trained_axioms(model: &DistanceModel, seed: u64) -> Result<f64> {
    Ok(head_guarantee_violations(model, TRAINED_AXIOM_SAMPLES, seeds::derive(seed, "axioms/trained"))? as f64)
}

fn run_norm2d(cfg: &Norm2dSection, seed: u64, dir: &Path) -> Result<Metrics> {
    let hull = match cfg.hull {
        HullChoice::Square => HullNorm::square(),
        HullChoice::Diamond => HullNorm::diamond(),
        HullChoice::Random => norm2d::generate_hull(seed, cfg.symmetric)?,
    };
    let data = norm2d::sample_dataset(&hull, cfg.train_size, seeds::derive(seed, "norm2d/data"))?;
    let head = norm2d::norm2d_head(cfg.model, hull.is_symmetric());
    let mut model = norm2d::norm2d_model(head, &mut seeds::stream(seed, "norm2d/init"))?;
    let outcome = norm2d::train_norm2d(&mut model, &data, &cfg.training, &mut seeds::stream(seed, "norm2d/shuffle"))?;
    norm2d::save_csv(&dir.join("hull.csv"), |w| hull.write_csv(w))?;
    norm2d::save_csv(&dir.join("dataset.csv"), |w| data.write_csv(w))?;
    let contours = norm2d::export_contours(&norm2d::OriginNorm(&model), &cfg.contour_levels, norm2d::CONTOUR_DIRECTIONS, 4.0, 400)?;
    norm2d::save_csv(&dir.join("contours.csv"), |w| norm2d::write_contours_csv(&contours, w))?;
    let truth = norm2d::export_contours(&hull, &cfg.contour_levels, norm2d::CONTOUR_DIRECTIONS, 4.0, 400)?;
    norm2d::save_csv(&dir.join("hull_contours.csv"), |w| norm2d::write_contours_csv(&truth, w))?;
    let mut curve = csv::Writer::from_path(dir.join("curve.csv"))?;
    curve.write_record(["epoch", "train_loss", "test_mse"])?;
    for (e, l, m) in &outcome.checkpoints {
        curve.write_record([e.to_string(), l.to_string(), m.to_string()])?;
    }
    curve.flush()?;
    Ok(Metrics::from([
        ("test_mse".into(), outcome.best_test_mse),
        ("best_epoch".into(), outcome.best_epoch as f64),
        ("axiom_violations".into(), trained_axioms(&model, seed)?),
    ]))
}

fn run_nearness(cfg: &NearnessSection, seed: u64, dir: &Path) -> Result<Metrics> {
    let problem =
        if cfg.symmetric { nearness::generate_symmetric(cfg.n, seed)? } else { nearness::generate_asymmetric(cfg.n, seed)? };
    problem.d.save_csv(&dir.join("d.csv"))?;
    let mut m = Metrics::new();
    for &solver in &cfg.solvers {
        let (sol, model) = match solver {
            NearnessSolver::Tf => (nearness::triangle_fix(&problem, cfg.triangle_fixing)?, None),
            _ => {
                let (s, model) = nearness::train_neural_nearness(&problem, solver, &cfg.neural, seed)?;
                (s, Some(model))
            }
        };
        sol.x.save_csv(&dir.join(format!("x_{solver}.csv")))?;
        m.insert(format!("{solver}.j_mn"), sol.distortion);
        m.insert(format!("{solver}.j_mn_squared"), sol.squared_distortion());
        m.insert(format!("{solver}.violations"), sol.violations as f64);
        m.insert(format!("{solver}.iterations"), sol.iterations as f64);
        if let Some(model) = model {
            m.insert(format!("{solver}.axiom_violations"), trained_axioms(&model, seed)?);
        }
    }
    Ok(m)
}

fn run_graph(cfg: &GraphExperiment, seed: u64, dir: &Path) -> Result<Metrics> {
    let run = run_graph_experiment(cfg, seed)?;
    let mut curve = csv::Writer::from_path(dir.join("curve.csv"))?;
    curve.write_record(["epoch", "train_loss", "test_mse"])?;
    for r in &run.outcome.curve {
        curve.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.test_mse.to_string()])?;
    }
    curve.flush()?;
    let o = &run.outcome;
    Ok(Metrics::from([
        ("test_mse".into(), o.final_test_mse),
        ("train_loss".into(), o.curve.last().map_or(f64::NAN, |r| r.train_loss)),
        ("nodes".into(), o.nodes as f64),
        ("edges".into(), o.edges as f64),
        ("axiom_violations".into(), trained_axioms(&run.model, seed)?),
    ]))
}

fn run_gvf(cfg: &GvfExperiment, seed: u64, dir: &Path) -> Result<Metrics> {
    let run = gvf::run_gvf_experiment(cfg, seed)?;
    let o = &run.outcome;
    let mut losses = csv::Writer::from_path(dir.join("losses.csv"))?;
    losses.write_record(["epoch", "td_loss"])?;
    for (e, l) in o.losses.iter().enumerate() {
        losses.write_record([e.to_string(), l.to_string()])?;
    }
    losses.flush()?;
    let mut evals = csv::Writer::from_path(dir.join("evals.csv"))?;
    evals.write_record(["epoch", "split", "mse", "success", "spl"])?;
    let last = o.losses.len().saturating_sub(1);
    let rows = o.checkpoints.iter().map(|c| (c.epoch, c.train, c.test)).chain([(last, o.train, o.test)]);
    for (epoch, train, test) in rows {
        for (split, e) in [("train", train), ("test", test)] {
            evals.write_record([epoch.to_string(), split.into(), e.mse.to_string(), e.success.to_string(), e.spl.to_string()])?;
        }
    }
    evals.flush()?;
    let values = gvf::value_table(&run.env, &run.model)?;
    let cells = gvf::cell_summary(&run.env, &values, &run.truth, &run.split.test, cfg.td.horizon);
    for (name, grid) in [("value", &cells.value), ("sq_error", &cells.sq_error), ("spl", &cells.spl)] {
        norm2d::save_csv(&dir.join(format!("heatmap_{name}.csv")), |w| gvf::write_cell_grid(&run.env, grid, w))?;
    }
    let sensitive = gvf::direction_sensitive_pairs(&run.truth, &run.split.test, 1e-9);
    let sensitive_mse = if sensitive.is_empty() {
        0.0
    } else {
        sensitive.iter().map(|&(s, g)| (values.get(s, g) - run.truth.get(s, g)).powi(2)).sum::<f64>() / sensitive.len() as f64
    };
    Ok(Metrics::from([
        ("train_mse".into(), o.train.mse),
        ("train_success".into(), o.train.success),
        ("train_spl".into(), o.train.spl),
        ("test_mse".into(), o.test.mse),
        ("test_success".into(), o.test.success),
        ("test_spl".into(), o.test.spl),
        ("asym_pair_mse".into(), sensitive_mse),
        ("axiom_violations".into(), trained_axioms(&run.model, seed)?),
    ]))
}

fn run_axioms(cfg: &AxiomsSection, seed: u64, dir: &Path) -> Result<Metrics> {
    let mut m = Metrics::new();
    let mut all = Vec::new();
    for (name, spec) in reference_heads(cfg.dim) {
        let model = NormModel::new(spec.clone(), &mut seeds::stream(seed, &format!("axioms/init/{name}")))?;
        let reports = check_guarantees(&model, &spec, cfg.samples, cfg.tol, seeds::derive(seed, &format!("axioms/{name}")))?;
        for r in &reports {
            m.insert(format!("{name}.{}", r.axiom), r.violations as f64);
        }
        all.extend(reports);
    }
    m.insert("total_violations".into(), all.iter().map(|r| r.violations as f64).sum());
    axioms::write_json_lines(&all, std::io::BufWriter::new(fs::File::create(dir.join("axioms.jsonl"))?))?;
    Ok(m)
}

fn run_fig1(cfg: &Figure1Config, seed: u64, dir: &Path) -> Result<Metrics> {
    let run = run_figure1(cfg, seed)?;
    let o = &run.outcome;
    let mut fits = csv::Writer::from_path(dir.join("fits.csv"))?;
    fits.write_record(["model", "dim", "restart", "mse"])?;
    for f in &o.fits {
        fits.write_record([f.model.name().to_string(), f.dim.to_string(), f.restart.to_string(), f.mse.to_string()])?;
    }
    fits.flush()?;
    for (kind, matrix) in &run.matrices {
        matrix.save_csv(&dir.join(format!("distances_{}.csv", kind.name())))?;
    }
    let mut violations = 0.0;
    for (_, model) in &run.models {
        violations += trained_axioms(model, seed)?;
    }
    Ok(Metrics::from([
        ("axiom_violations".into(), violations),
        ("euclidean_mse".into(), o.euclidean.mse),
        ("euclidean_dim".into(), o.euclidean.dim as f64),
        ("deepnorm_mse".into(), o.deep_norm.mse),
        ("widenorm_mse".into(), o.wide_norm.mse),
    ]))
}

/// Checks a trained distance model's head with the full sampler budget.
pub fn trained_head_reports(model: &DistanceModel, samples: usize, seed: u64) -> Result<Vec<axioms::AxiomReport>> {
    check_guarantees(&HeadNorm(model), &model.spec().head, samples, axioms::DEFAULT_TOL, seed)
}

/// A cell is `mean ± sd` over seeds, or absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: Vec<String>,
    pub cells: Vec<Option<Aggregate>>,
    /// A seed failed or a metric is missing.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub title: String,
    pub label_columns: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.label_columns.clone();
        for c in &self.columns {
            header.extend([format!("{c}_mean"), format!("{c}_sd"), format!("{c}_n")]);
        }
        header.push("incomplete".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = r.label.clone();
            for c in &r.cells {
                match c {
                    Some(a) => rec.extend([a.mean.to_string(), a.sd.to_string(), a.n.to_string()]),
                    None => rec.extend([String::new(), String::new(), "0".into()]),
                }
            }
            rec.push(r.incomplete.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let header: Vec<String> = self.label_columns.iter().chain(&self.columns).cloned().collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = r.label.clone();
                cells.extend(r.cells.iter().map(|c| match c {
                    Some(a) if a.n > 1 => format!("{:.3e} ± {:.1e}", a.mean, a.sd),
                    Some(a) => format!("{:.3e}", a.mean),
                    None => "-".into(),
                }));
                if r.incomplete {
                    cells[0].push_str(" (incomplete)");
                }
                cells
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|row| row[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| -> String {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }
}

fn values_of(run: &RunReport, key: &str) -> (Option<Aggregate>, bool) {
    let vals: Vec<f64> = run.seeds.iter().filter(|s| s.error.is_none()).filter_map(|s| s.metrics.get(key).copied()).collect();
    let missing = vals.len() < run.seeds.len();
    (Aggregate::of(&vals), missing)
}

/// Joins run reports into tables. Nearness runs give one row per solver
/// (J_MN and triangle violations); graph runs give a model × graph table of
/// test MSE; other experiments give one row per run.
pub fn report(runs: &[RunReport]) -> Result<Vec<ReportTable>> {
    if runs.is_empty() {
        return Err(Error::InvalidConfig("report needs at least one completed run".into()));
    }
    let kinds: BTreeSet<ExperimentKind> = runs.iter().map(|r| r.experiment).collect();
    let mut tables = Vec::new();
    for kind in kinds {
        let group: Vec<&RunReport> = runs.iter().filter(|r| r.experiment == kind).collect();
        tables.push(match kind {
            ExperimentKind::Nearness => nearness_table(&group),
            ExperimentKind::Graph => graph_table(&group),
            _ => generic_table(kind, &group),
        });
    }
    Ok(tables)
}

fn nearness_table(runs: &[&RunReport]) -> ReportTable {
    let columns = vec!["J_MN".to_string(), "J_MN^2".to_string(), "#not_M3".to_string()];
    let mut rows = Vec::new();
    for run in runs {
        let solvers: BTreeSet<&str> =
            run.seeds.iter().flat_map(|s| s.metrics.keys()).filter_map(|k| k.strip_suffix(".j_mn")).collect();
        let ordered = NearnessSolver::ALL.iter().map(|s| s.name()).filter(|s| solvers.contains(s));
        for solver in ordered {
            let mut incomplete = run.failed();
            let cells = ["j_mn", "j_mn_squared", "violations"]
                .iter()
                .map(|m| {
                    let (a, missing) = values_of(run, &format!("{solver}.{m}"));
                    incomplete |= missing;
                    a
                })
                .collect();
            let label = ["n", "mode"].iter().map(|k| run.labels.get(*k).cloned().unwrap_or_default()).chain([solver.to_string()]);
            rows.push(ReportRow { label: label.collect(), cells, incomplete });
        }
    }
    ReportTable {
        title: "Metric nearness".into(),
        label_columns: vec!["n".into(), "mode".into(), "solver".into()],
        columns,
        rows,
    }
}

fn graph_table(runs: &[&RunReport]) -> ReportTable {
    let label = |r: &RunReport, k: &str| r.labels.get(k).cloned().unwrap_or_default();
    let graphs: Vec<String> = runs.iter().map(|r| label(r, "graph")).collect::<BTreeSet<_>>().into_iter().collect();
    let models: Vec<String> = runs.iter().map(|r| label(r, "model")).collect::<BTreeSet<_>>().into_iter().collect();
    let rows = models
        .iter()
        .map(|model| {
            let mut incomplete = false;
            let cells = graphs
                .iter()
                .map(|graph| {
                    let matching: Vec<&&RunReport> =
                        runs.iter().filter(|r| &label(r, "model") == model && &label(r, "graph") == graph).collect();
                    let vals: Vec<f64> = matching
                        .iter()
                        .flat_map(|r| r.seeds.iter())
                        .filter(|s| s.error.is_none())
                        .filter_map(|s| s.metrics.get("test_mse").copied())
                        .collect();
                    let total: usize = matching.iter().map(|r| r.seeds.len()).sum();
                    incomplete |= vals.len() < total;
                    Aggregate::of(&vals)
                })
                .collect();
            ReportRow { label: vec![model.clone()], cells, incomplete }
        })
        .collect();
    ReportTable { title: "Graph distances: test MSE".into(), label_columns: vec!["model".into()], columns: graphs, rows }
}

fn generic_table(kind: ExperimentKind, runs: &[&RunReport]) -> ReportTable {
    let label_columns: Vec<String> = runs.iter().flat_map(|r| r.labels.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let columns: Vec<String> =
        runs.iter().flat_map(|r| r.seeds.iter().flat_map(|s| s.metrics.keys().cloned())).collect::<BTreeSet<_>>().into_iter().collect();
    let rows = runs
        .iter()
        .map(|run| {
            let mut incomplete = run.failed();
            let cells = columns
                .iter()
                .map(|c| {
                    let (a, missing) = values_of(run, c);
                    incomplete |= missing;
                    a
                })
                .collect();
            let label = label_columns.iter().map(|k| run.labels.get(k).cloned().unwrap_or_default()).collect();
            ReportRow { label, cells, incomplete }
        })
        .collect();
    ReportTable { title: kind.name().to_string(), label_columns, columns, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_override_is_the_default_recipe() {
        let cfg = ExperimentConfig::from_toml("experiment = \"gvf\"").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(ExperimentKind::Gvf));
        assert_eq!(cfg.gvf.td.epochs, 1000);
        assert_eq!(cfg.nearness.n, 200);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_toml("experiment = \"graph\"\nseeds = []").unwrap_err().to_string();
        assert!(err.contains("seeds"), "{err}");
        let err = ExperimentConfig::from_toml("experiment = \"dreams\"").unwrap_err().to_string();
        assert!(err.contains("experiment") || err.contains("dreams"), "{err}");
        let err = ExperimentConfig::from_toml("experiment = \"gvf\"\n[gvf]\nhead = \"tree\"").unwrap_err().to_string();
        assert!(err.contains("head") || err.contains("tree"), "{err}");
    }

    #[test]
    fn hash_ignores_output_location() {
        let mut a = ExperimentConfig::new(ExperimentKind::Figure1);
        let h = a.hash();
        a.out = PathBuf::from("/elsewhere");
        a.threads = Some(3);
        assert_eq!(a.hash(), h);
        a.seeds.push(2);
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::new(ExperimentKind::Nearness);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn aggregate_uses_sample_sd() {
        let a = Aggregate::of(&[1.0, 2.0, 4.0]).unwrap();
        assert!((a.mean - 7.0 / 3.0).abs() < 1e-15);
        let var = ((1.0f64 - 7.0 / 3.0).powi(2) + (2.0f64 - 7.0 / 3.0).powi(2) + (4.0f64 - 7.0 / 3.0).powi(2)) / 2.0;
        assert!((a.sd - var.sqrt()).abs() < 1e-15);
        assert_eq!(Aggregate::of(&[5.0]).unwrap().sd, 0.0);
        assert!(Aggregate::of(&[]).is_none());
    }
}
