//! Goal-conditioned values on 11×11 gridworlds, learned by TD with a
//! Polyak-averaged target network.
//!
//! The value is `V(s, g) = −f(φ(g) − φ(s))`: the head measures a cost to go,
//! so metric heads make `−V` a quasi-metric over states.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, DiffError, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphdist::Graph;
use crate::metrics::{DistanceModel, DistanceSpec, EmbeddingSpec, PairMode};
use crate::norms::{Activation, DeepNormSpec, HeadSpec, IcnnSpec, MlpSpec, NeuralMetricSpec, Pooling, WideNormSpec};
use crate::seeds;

pub const SIDE: usize = 11;
/// Empty, wall, agent.
pub const CHANNELS: usize = 3;
pub const HORIZON: usize = SIDE * SIDE;

/// Nine-by-nine interior split into four rooms by a wall cross with one
/// doorway per wall segment. 68 free cells.
pub const FOUR_ROOM: [&str; SIDE] = [
    "###########",
    "#....#....#",
    "#.........#",
    "#....#....#",
    "#....#....#",
    "##.####.###",
    "#....#....#",
    "#.........#",
    "#....#....#",
    "#....#....#",
    "###########",
];

/// A spanning-tree maze on the odd lattice plus one extra passage
/// (closing a single loop in the middle). 50 free cells.
pub const MAZE: [&str; SIDE] = [
    "###########",
    "#.........#",
    "#.#######.#",
    "#.#...#...#",
    "#.#.#.#.###",
    "#.#.#.#...#",
    "#.#.#.###.#",
    "#.#...#.#.#",
    "#.###.#.#.#",
    "#.....#...#",
    "###########",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    FourRoom,
    Maze,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::FourRoom => "four_room",
            EnvKind::Maze => "maze",
        }
    }

    pub fn layout(self) -> &'static [&'static str; SIDE] {
        match self {
            EnvKind::FourRoom => &FOUR_ROOM,
            EnvKind::Maze => &MAZE,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four_room" => Ok(EnvKind::FourRoom),
            "maze" => Ok(EnvKind::Maze),
            _ => Err(Error::InvalidConfig(format!("unknown environment '{s}' (four_room, maze)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    /// Greedy ties go to the earliest entry.
    pub const ORDER: [Dir; 4] = [Dir::N, Dir::S, Dir::E, Dir::W];

    fn delta(self) -> (isize, isize) {
        match self {
            Dir::N => (-1, 0),
            Dir::S => (1, 0),
            Dir::E => (0, 1),
            Dir::W => (0, -1),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    kind: EnvKind,
    asymmetric: bool,
    walls: Vec<bool>,
    /// Grid position of each state, in reading order.
    cells: Vec<usize>,
    state_of: Vec<Option<usize>>,
    /// Reward of leaving a state in each direction (NaN where blocked).
    rewards: Vec<[f64; 4]>,
}

impl GridEnv {
    /// Every move costs 1; asymmetric environments add a frozen `U(0, 5)`
    /// extra cost to each west and south move.
    pub fn build(kind: EnvKind, asymmetric: bool, seed: u64) -> Result<Self> {
        let layout = kind.layout();
        let mut walls = Vec::with_capacity(SIDE * SIDE);
        for row in layout {
            if row.len() != SIDE {
                return Err(Error::InvalidConfig(format!("layout rows must have {SIDE} cells")));
            }
            walls.extend(row.bytes().map(|b| b == b'#'));
        }
        let cells: Vec<usize> = (0..SIDE * SIDE).filter(|&p| !walls[p]).collect();
        let mut state_of = vec![None; SIDE * SIDE];
        for (s, &p) in cells.iter().enumerate() {
            state_of[p] = Some(s);
        }
        let mut rng = seeds::stream(seed, &format!("gvf/env/{kind}"));
        let mut rewards = Vec::with_capacity(cells.len());
        for &p in &cells {
            let mut r = [f64::NAN; 4];
            for d in Dir::ORDER {
                if step(&walls, p, d).is_some() {
                    let noise = if asymmetric && matches!(d, Dir::W | Dir::S) { rng.random_range(0.0..5.0) } else { 0.0 };
                    r[d.index()] = -1.0 - noise;
                }
            }
            rewards.push(r);
        }
        Ok(Self { kind, asymmetric, walls, cells, state_of, rewards })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn is_asymmetric(&self) -> bool {
        self.asymmetric
    }

    pub fn states(&self) -> usize {
        self.cells.len()
    }

    /// Ordered `(s, g)` pairs with `s != g`.
    pub fn pair_count(&self) -> usize {
        self.states() * (self.states() - 1)
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (self.cells[s] / SIDE, self.cells[s] % SIDE)
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row < SIDE && col < SIDE { self.state_of[row * SIDE + col] } else { None }
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls[row * SIDE + col]
    }

    pub fn reward(&self, s: usize, d: Dir) -> Option<f64> {
        let r = self.rewards[s][d.index()];
        (!r.is_nan()).then_some(r)
    }

    /// `(direction, next state, reward)` for each legal move, in N, S, E, W order.
    pub fn neighbors(&self, s: usize) -> Vec<(Dir, usize, f64)> {
        Dir::ORDER
            .into_iter()
            .filter_map(|d| {
                let p = step(&self.walls, self.cells[s], d)?;
                Some((d, self.state_of[p]?, self.rewards[s][d.index()]))
            })
            .collect()
    }

    /// One-hot `empty / wall / agent` per cell, flattened channel-last.
    pub fn encode(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; SIDE * SIDE * CHANNELS];
        for p in 0..SIDE * SIDE {
            let ch = if p == self.cells[s] { 2 } else if self.walls[p] { 1 } else { 0 };
            out[p * CHANNELS + ch] = 1.0;
        }
        out
    }

    pub fn encode_all(&self) -> Tensor {
        let data = (0..self.states()).flat_map(|s| self.encode(s)).collect();
        Tensor::from_parts(vec![self.states(), SIDE * SIDE * CHANNELS], data)
    }

    /// Directed graph with edge cost `−reward`.
    pub fn cost_graph(&self) -> Result<Graph> {
        let mut g = Graph::new(self.states(), true);
        for s in 0..self.states() {
            for (_, t, r) in self.neighbors(s) {
                g.add_edge(s, t, -r)?;
            }
        }
        Ok(g)
    }
}

fn step(walls: &[bool], p: usize, d: Dir) -> Option<usize> {
    let (dr, dc) = d.delta();
    let (r, c) = ((p / SIDE) as isize + dr, (p % SIDE) as isize + dc);
    if r < 0 || c < 0 || r >= SIDE as isize || c >= SIDE as isize {
        return None;
    }
    let q = r as usize * SIDE + c as usize;
    (!walls[q]).then_some(q)
}

/// `V(s, g)` for every state pair, row-major over `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    n: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Dimension { what: "value table", expected: n * n, got: values.len() });
        }
        Ok(Self { n, values })
    }

    pub fn states(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: usize, g: usize) -> f64 {
        self.values[s * self.n + g]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Optimal undiscounted values: minus the cheapest path cost.
pub fn ground_truth_values(env: &GridEnv) -> Result<ValueTable> {
    let g = env.cost_graph()?;
    let sources: Vec<usize> = (0..env.states()).collect();
    let mut values = Vec::with_capacity(env.states().pow(2));
    for (s, row) in g.distances_from(&sources).into_iter().enumerate() {
        for (t, d) in row.into_iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::Unreachable { from: s, to: t });
            }
            values.push(-d);
        }
    }
    ValueTable::new(env.states(), values)
}

/// Pairs whose optimal values differ between directions.
pub fn direction_sensitive_pairs(truth: &ValueTable, pairs: &[(usize, usize)], tol: f64) -> Vec<(usize, usize)> {
    pairs.iter().copied().filter(|&(s, g)| (truth.get(s, g) - truth.get(g, s)).abs() > tol).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Goal,
    State,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goal" => Ok(SplitMode::Goal),
            "state" => Ok(SplitMode::State),
            _ => Err(Error::InvalidConfig(format!("unknown split '{s}' (goal, state)"))),
        }
    }
}

/// `(s, g)` pairs; transitions come from the environment's neighbor function.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub mode: SplitMode,
    pub fraction: f64,
    /// States held out as goals (goal mode) or as start states (state mode).
    pub held_out: Vec<usize>,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Holds out the last `round((1 − η)·states)` states in reading order, i.e.
/// the bottom rows. With `η = 1` the test set is every pair.
pub fn split_dataset(env: &GridEnv, mode: SplitMode, fraction: f64) -> Result<TransitionSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("training fraction must be in (0, 1], got {fraction}")));
    }
    let n = env.states();
    let held = ((1.0 - fraction) * n as f64).round() as usize;
    let held_out: Vec<usize> = (n - held.min(n)..n).collect();
    let all: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).filter(move |&g| g != s).map(move |g| (s, g))).collect();
    let is_held = |&(s, g): &(usize, usize)| {
        let key = if mode == SplitMode::Goal { g } else { s };
        key >= n - held
    };
    let (test, train): (Vec<_>, Vec<_>) = all.iter().copied().partition(is_held);
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("training fraction {fraction} leaves no training pairs")));
    }
    let test = if held == 0 { all } else { test };
    Ok(TransitionSet { mode, fraction, held_out, train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GvfHead {
    Mlp,
    Icnn,
    DeepNorm,
    WideNorm,
    Euclidean,
}

impl GvfHead {
    pub const ALL: [GvfHead; 5] = [GvfHead::Mlp, GvfHead::Icnn, GvfHead::DeepNorm, GvfHead::WideNorm, GvfHead::Euclidean];

    pub fn name(self) -> &'static str {
        match self {
            GvfHead::Mlp => "mlp",
            GvfHead::Icnn => "icnn",
            GvfHead::DeepNorm => "deepnorm",
            GvfHead::WideNorm => "widenorm",
            GvfHead::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for GvfHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GvfHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GvfHead::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown gvf head '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueArch {
    pub filters: Vec<usize>,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Hidden width of the MLP, ICNN and Deep Norm heads; component size of the Wide Norm.
    pub head_width: usize,
    pub head_layers: usize,
    pub wide_components: usize,
    pub pieces: usize,
}

impl Default for ValueArch {
    fn default() -> Self {
        Self { filters: vec![32, 64], hidden: 128, embed_dim: 64, head_width: 64, head_layers: 3, wide_components: 32, pieces: 5 }
    }
}

impl ValueArch {
    pub fn spec(&self, head: GvfHead, asymmetric: bool) -> DistanceSpec {
        let e = self.embed_dim;
        let widths = vec![self.head_width; self.head_layers];
        let neural = |base: HeadSpec| {
            HeadSpec::NeuralMetric(NeuralMetricSpec { base: Box::new(base), pieces: self.pieces, pooling: Pooling::Mean })
        };
        let head = match head {
            GvfHead::Mlp => HeadSpec::Mlp(MlpSpec { input_dim: e, widths }),
            GvfHead::Icnn => HeadSpec::Icnn(IcnnSpec { input_dim: e, widths }),
            GvfHead::DeepNorm => neural(HeadSpec::DeepNorm(DeepNormSpec {
                input_dim: e,
                widths,
                activation: Activation::MaxRelu,
                pooling: Pooling::Mean,
            })),
            GvfHead::WideNorm => neural(HeadSpec::WideNorm(WideNormSpec {
                input_dim: e,
                components: self.wide_components,
                component_dim: self.head_width,
                asymmetric,
                pooling: Pooling::Mean,
            })),
            GvfHead::Euclidean => HeadSpec::Euclidean { input_dim: e },
        };
        let embedding = EmbeddingSpec::Conv {
            height: SIDE,
            width: SIDE,
            channels: CHANNELS,
            filters: self.filters.clone(),
            hidden: self.hidden,
            output_dim: e,
        };
        DistanceSpec { embedding, head, mode: PairMode::Metric }
    }
}

/// `V(s, g) = −d(s, g)` for every pair, from one embedding pass.
pub fn value_table(env: &GridEnv, model: &DistanceModel) -> Result<ValueTable> {
    let n = env.states();
    let emb = model.embed(&env.encode_all())?;
    let e = emb.cols();
    let mut xs = Vec::with_capacity(n * n * e);
    let mut ys = Vec::with_capacity(n * n * e);
    for s in 0..n {
        for g in 0..n {
            xs.extend_from_slice(emb.row_slice(s));
            ys.extend_from_slice(emb.row_slice(g));
        }
    }
    let mut tape = Tape::new();
    let ex = tape.input(Tensor::new(vec![n * n, e], xs)?);
    let ey = tape.input(Tensor::new(vec![n * n, e], ys)?);
    let d = model.head_node(&mut tape, ex, ey)?;
    ValueTable::new(n, tape.value(d).data().iter().map(|v| -v).collect())
}

/// TD target `max over s' of r(s, s') + [s' != g]·V(s', g)`.
pub fn td_target(env: &GridEnv, values: &ValueTable, s: usize, g: usize) -> f64 {
    env.neighbors(s)
        .into_iter()
        .map(|(_, t, r)| if t == g { r } else { r + values.get(t, g) })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Target update `θ̄ ← polyak·θ̄ + (1 − polyak)·θ`, once per epoch.
    pub polyak: f64,
    pub eval_every: usize,
    pub eval_pairs: usize,
    pub horizon: usize,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self { epochs: 1000, batch_size: 128, lr: 1e-4, polyak: 0.95, eval_every: 200, eval_pairs: 100, horizon: HORIZON }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::InvalidConfig(format!("invalid TD settings {self:?}")));
        }
        Ok(())
    }
}

/// One TD epoch per call of `on_epoch(epoch, mean_loss, model)`. Targets are
/// computed from the frozen target network at the start of each epoch.
pub fn td_train<R: Rng + ?Sized>(
    env: &GridEnv,
    model: &mut DistanceModel,
    train: &[(usize, usize)],
    cfg: &TdConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, f64, &DistanceModel) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let encodings = env.encode_all();
    let width = encodings.cols();
    let mut target = model.clone();
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let frozen = value_table(env, &target)?;
        let y: Vec<f64> = train.iter().map(|&(s, g)| td_target(env, &frozen, s, g)).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // Embed each distinct state of the batch once.
            let mut slot: HashMap<usize, usize> = HashMap::new();
            let mut states = Vec::new();
            let mut idx = |s: usize| {
                *slot.entry(s).or_insert_with(|| {
                    states.push(s);
                    states.len() - 1
                })
            };
            let (is, ig): (Vec<usize>, Vec<usize>) = chunk.iter().map(|&p| (idx(train[p].0), idx(train[p].1))).unzip();
            let mut data = Vec::with_capacity(states.len() * width);
            for &s in &states {
                data.extend_from_slice(encodings.row_slice(s));
            }
            let targets = Tensor::new(vec![chunk.len(), 1], chunk.iter().map(|&p| y[p]).collect())?;
            let mut tape = Tape::new();
            let x = tape.input(Tensor::new(vec![states.len(), width], data)?);
            let t = tape.input(targets);
            let step = (|| -> Result<f64> {
                let emb = model.embed_node(&mut tape, x)?;
                let es = tape.gather_rows(emb, &is)?;
                let eg = tape.gather_rows(emb, &ig)?;
                let d = model.head_node(&mut tape, es, eg)?;
                let v = tape.neg(d)?;
                let loss = tape.mse(v, t)?;
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
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        target.params_mut().polyak_update(model.params(), cfg.polyak)?;
        losses.push(mean);
        on_epoch(epoch, mean, model)?;
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvfEval {
    pub mse: f64,
    pub success: f64,
    pub spl: f64,
    pub pairs: usize,
    pub rollouts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub reached: bool,
    pub steps: usize,
    /// Accumulated path cost (positive).
    pub cost: f64,
}

impl Rollout {
    /// `S·l / max(p, l)` for optimal cost `l`.
    pub fn spl(&self, optimal: f64) -> f64 {
        if self.reached { optimal / self.cost.max(optimal) } else { 0.0 }
    }
}

/// Greedy walk: move to `argmax r(s, s') + V(s', g)`, with `V(g, g)` taken as 0.
pub fn greedy_rollout(env: &GridEnv, values: &ValueTable, start: usize, goal: usize, horizon: usize) -> Rollout {
    let (mut s, mut cost) = (start, 0.0);
    for t in 0..horizon {
        if s == goal {
            return Rollout { reached: true, steps: t, cost };
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for (_, next, r) in env.neighbors(s) {
            let q = r + if next == goal { 0.0 } else { values.get(next, goal) };
            if best.is_none_or(|(bq, _, _)| q > bq) {
                best = Some((q, next, r));
            }
        }
        let Some((_, next, r)) = best else { break };
        s = next;
        cost -= r;
    }
    Rollout { reached: s == goal, steps: horizon, cost }
}

/// MSE against `V*` over all `pairs`; success and SPL over up to
/// `rollouts` pairs sampled without replacement.
pub fn evaluate<R: Rng + ?Sized>(
    env: &GridEnv,
    values: &ValueTable,
    truth: &ValueTable,
    pairs: &[(usize, usize)],
    rollouts: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<GvfEval> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no pairs to evaluate".into()));
    }
    let mse = pairs.iter().map(|&(s, g)| (values.get(s, g) - truth.get(s, g)).powi(2)).sum::<f64>() / pairs.len() as f64;
    let k = rollouts.min(pairs.len());
    let (mut success, mut spl) = (0.0, 0.0);
    for i in index::sample(rng, pairs.len(), k) {
        let (s, g) = pairs[i];
        let roll = greedy_rollout(env, values, s, g, horizon);
        success += roll.reached as u8 as f64;
        spl += roll.spl(-truth.get(s, g));
    }
    let k_f = k.max(1) as f64;
    Ok(GvfEval { mse, success: success / k_f, spl: spl / k_f, pairs: pairs.len(), rollouts: k })
}

/// Per start state: mean predicted value, mean squared error against `V*`
/// and mean greedy SPL over the pairs that start there (NaN where none).
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub value: Vec<f64>,
    pub sq_error: Vec<f64>,
    pub spl: Vec<f64>,
}

pub fn cell_summary(env: &GridEnv, values: &ValueTable, truth: &ValueTable, pairs: &[(usize, usize)], horizon: usize) -> CellSummary {
    let n = env.states();
    let (mut value, mut sq_error, mut spl, mut count) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0usize; n]);
    for &(s, g) in pairs {
        let v = values.get(s, g);
        value[s] += v;
        sq_error[s] += (v - truth.get(s, g)).powi(2);
        spl[s] += greedy_rollout(env, values, s, g, horizon).spl(-truth.get(s, g));
        count[s] += 1;
    }
    for s in 0..n {
        let c = count[s] as f64;
        for v in [&mut value[s], &mut sq_error[s], &mut spl[s]] {
            *v = if count[s] == 0 { f64::NAN } else { *v / c };
        }
    }
    CellSummary { value, sq_error, spl }
}

/// Per-cell grid (walls left blank) for external heatmaps.
pub fn write_cell_grid<W: Write>(env: &GridEnv, per_state: &[f64], w: W) -> Result<()> {
    if per_state.len() != env.states() {
        return Err(Error::Dimension { what: "per-state values", expected: env.states(), got: per_state.len() });
    }
    let mut out = csv::Writer::from_writer(w);
    for r in 0..SIDE {
        let row: Vec<String> =
            (0..SIDE).map(|c| env.state_at(r, c).map(|s| format!("{:.10e}", per_state[s])).unwrap_or_default()).collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GvfExperiment {
    pub env: EnvKind,
    pub asymmetric: bool,
    pub head: GvfHead,
    pub split: SplitMode,
    pub fraction: f64,
    pub arch: ValueArch,
    pub td: TdConfig,
}

impl GvfExperiment {
    /// Single-core budget: 8 and 16 filters, batch 512 at rate 1e-3 for
    /// 200 epochs. The target still moves by Polyak 0.95 once per epoch.
    pub fn desk(env: EnvKind, asymmetric: bool, head: GvfHead, split: SplitMode, fraction: f64) -> Self {
        Self {
            env,
            asymmetric,
            head,
            split,
            fraction,
            arch: ValueArch { filters: vec![8, 16], ..ValueArch::default() },
            td: TdConfig { epochs: 200, batch_size: 512, lr: 1e-3, eval_every: 0, ..TdConfig::default() },
        }
    }
}

impl Default for GvfExperiment {
    fn default() -> Self {
        Self {
            env: EnvKind::FourRoom,
            asymmetric: false,
            head: GvfHead::WideNorm,
            split: SplitMode::Goal,
            fraction: 1.0,
            arch: ValueArch::default(),
            td: TdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvfCheckpoint {
    pub epoch: usize,
    pub train: GvfEval,
    pub test: GvfEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvfOutcome {
    pub losses: Vec<f64>,
    pub checkpoints: Vec<GvfCheckpoint>,
    pub train: GvfEval,
    pub test: GvfEval,
}

#[derive(Debug, Clone)]
pub struct GvfRun {
    pub outcome: GvfOutcome,
    pub env: GridEnv,
    pub split: TransitionSet,
    pub truth: ValueTable,
    pub model: DistanceModel,
}

pub fn run_gvf_experiment(cfg: &GvfExperiment, seed: u64) -> Result<GvfRun> {
    let env = GridEnv::build(cfg.env, cfg.asymmetric, seed)?;
    let truth = ground_truth_values(&env)?;
    let split = split_dataset(&env, cfg.split, cfg.fraction)?;
    let spec = cfg.arch.spec(cfg.head, cfg.asymmetric);
    let mut model = DistanceModel::new(spec, &mut seeds::stream(seed, &format!("gvf/init/{}", cfg.head)))?;
    let mut eval_rng = seeds::stream(seed, "gvf/eval");
    let mut checkpoints = Vec::new();
    let every = cfg.td.eval_every;
    let (td, horizon, rollouts) = (&cfg.td, cfg.td.horizon, cfg.td.eval_pairs);
    let losses = td_train(&env, &mut model, &split.train, td, &mut seeds::stream(seed, "gvf/shuffle"), |epoch, _, m| {
        if every > 0 && (epoch + 1) % every == 0 {
            let v = value_table(&env, m)?;
            checkpoints.push(GvfCheckpoint {
                epoch,
                train: evaluate(&env, &v, &truth, &split.train, rollouts, horizon, &mut eval_rng)?,
                test: evaluate(&env, &v, &truth, &split.test, rollouts, horizon, &mut eval_rng)?,
            });
        }
        Ok(())
    })?;
    let v = value_table(&env, &model)?;
    let outcome = GvfOutcome {
        losses,
        checkpoints,
        train: evaluate(&env, &v, &truth, &split.train, rollouts, horizon, &mut eval_rng)?,
        test: evaluate(&env, &v, &truth, &split.test, rollouts, horizon, &mut eval_rng)?,
    };
    Ok(GvfRun { outcome, env, split, truth, model })
}
