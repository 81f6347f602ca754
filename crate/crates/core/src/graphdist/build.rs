use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Cubic grid, six moves, wraparound.
    Grid3d,
    /// Grid3d keeping only the +x, +y, +z moves.
    Grid3dDirected,
    /// Grid3d keeping three random moves per node, then its largest SCC.
    Grid3dRandpruned,
    /// Square grid with a passenger that can be picked up and dropped.
    Taxi,
    /// Square grid with a pushable box.
    Push,
}

impl GraphKind {
    pub const ALL: [GraphKind; 5] =
        [GraphKind::Grid3d, GraphKind::Grid3dDirected, GraphKind::Grid3dRandpruned, GraphKind::Taxi, GraphKind::Push];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Grid3d => "grid3d",
            GraphKind::Grid3dDirected => "grid3d_directed",
            GraphKind::Grid3dRandpruned => "grid3d_randpruned",
            GraphKind::Taxi => "taxi",
            GraphKind::Push => "push",
        }
    }

    pub fn is_directed(self) -> bool {
        matches!(self, GraphKind::Grid3dDirected | GraphKind::Grid3dRandpruned | GraphKind::Push)
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GraphKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown graph kind '{s}'")))
    }
}

/// Uniform draw from `{0.01, 0.02, ..., 1.00}`.
pub fn sample_weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(1..=100u32) as f64 / 100.0
}

pub fn build_graph<R: Rng + ?Sized>(kind: GraphKind, size: usize, rng: &mut R) -> Result<Graph> {
    if size < 2 {
        return Err(Error::InvalidConfig(format!("graph size must be at least 2, got {size}")));
    }
    let g = match kind {
        GraphKind::Grid3d => grid3d(size, rng)?,
        GraphKind::Grid3dDirected => grid3d_directed(size, rng)?,
        GraphKind::Grid3dRandpruned => grid3d_randpruned(size, rng)?.largest_scc()?,
        GraphKind::Taxi => taxi(size, rng)?,
        GraphKind::Push => push(size, rng)?.largest_scc()?,
    };
    if g.nodes() == 0 {
        return Err(Error::Degenerate(format!("{kind} graph is empty")));
    }
    Ok(g)
}

fn cube_id(size: usize, c: [usize; 3]) -> usize {
    (c[0] * size + c[1]) * size + c[2]
}

fn cube_step(size: usize, c: [usize; 3], axis: usize, forward: bool) -> [usize; 3] {
    let mut out = c;
    out[axis] = if forward { (c[axis] + 1) % size } else { (c[axis] + size - 1) % size };
    out
}

fn cube_cells(size: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..size).flat_map(move |x| (0..size).flat_map(move |y| (0..size).map(move |z| [x, y, z])))
}

fn grid3d<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<Graph> {
    let mut g = Graph::new(size.pow(3), false);
    for c in cube_cells(size) {
        for axis in 0..3 {
            let w = sample_weight(rng);
            g.add_edge(cube_id(size, c), cube_id(size, cube_step(size, c, axis, true)), w)?;
        }
    }
    Ok(g)
}

fn grid3d_directed<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<Graph> {
    let mut g = Graph::new(size.pow(3), true);
    for c in cube_cells(size) {
        for axis in 0..3 {
            let w = sample_weight(rng);
            g.add_edge(cube_id(size, c), cube_id(size, cube_step(size, c, axis, true)), w)?;
        }
    }
    Ok(g)
}

fn grid3d_randpruned<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<Graph> {
    let mut g = Graph::new(size.pow(3), true);
    for c in cube_cells(size) {
        for m in index::sample(rng, 6, 3).into_vec() {
            let w = sample_weight(rng);
            g.add_edge(cube_id(size, c), cube_id(size, cube_step(size, c, m / 2, m % 2 == 0)), w)?;
        }
    }
    Ok(g)
}

/// `(dx, dy)` for N, S, E, W on a grid indexed `row * side + col`.
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)];

fn grid_step(side: usize, cell: usize, (dr, dc): (isize, isize)) -> Option<usize> {
    let (r, c) = ((cell / side) as isize + dr, (cell % side) as isize + dc);
    let s = side as isize;
    (0..s).contains(&r).then_some(())?;
    (0..s).contains(&c).then_some(())?;
    Some(r as usize * side + c as usize)
}

/// Node count of the taxi graph on a `side × side` grid.
pub fn taxi_nodes(side: usize) -> usize {
    side * side * (side * side + 1)
}

/// States `(agent, passenger)`, passenger in `0..side²` (waiting at a cell)
/// or `side²` (carried); id `agent * (side² + 1) + passenger`.
fn taxi<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Result<Graph> {
    let cells = side * side;
    let id = |a: usize, p: usize| a * (cells + 1) + p;
    let mut g = Graph::new(taxi_nodes(side), false);
    for a in 0..cells {
        // South and east cover every undirected move once.
        for mv in [MOVES[1], MOVES[2]] {
            if let Some(b) = grid_step(side, a, mv) {
                for p in 0..=cells {
                    let w = sample_weight(rng);
                    g.add_edge(id(a, p), id(b, p), w)?;
                }
            }
        }
        // Pick up at a, drop at a.
        let w = sample_weight(rng);
        g.add_edge(id(a, a), id(a, cells), w)?;
    }
    Ok(g)
}

/// States `(agent, box)` with distinct cells, in lexicographic order.
/// Walking into the box pushes it; pushing it off the grid swaps agent and box.
fn push<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Result<Graph> {
    let cells = side * side;
    let id = |a: usize, b: usize| a * (cells - 1) + if b > a { b - 1 } else { b };
    let mut g = Graph::new(cells * (cells - 1), true);
    for a in 0..cells {
        for b in (0..cells).filter(|&b| b != a) {
            for mv in MOVES {
                let Some(t) = grid_step(side, a, mv) else { continue };
                let next = if t != b {
                    (t, b)
                } else {
                    match grid_step(side, b, mv) {
                        Some(b2) => (b, b2),
                        None => (b, a),
                    }
                };
                let w = sample_weight(rng);
                g.add_edge(id(a, b), id(next.0, next.1), w)?;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn grid_degrees() {
        let g = build_graph(GraphKind::Grid3d, 3, &mut rng()).unwrap();
        assert_eq!(g.nodes(), 27);
        assert!((0..27).all(|v| g.out_degree(v) == 6));
        let d = build_graph(GraphKind::Grid3dDirected, 3, &mut rng()).unwrap();
        assert!((0..27).all(|v| d.out_degree(v) == 3));
        assert!(d.is_strongly_connected());
    }

    #[test]
    fn weights_on_the_hundredths_grid() {
        let g = build_graph(GraphKind::Taxi, 3, &mut rng()).unwrap();
        for (_, _, w) in g.edges() {
            let k = (w * 100.0).round();
            assert!((1.0..=100.0).contains(&k) && (w * 100.0 - k).abs() < 1e-9);
        }
    }

    #[test]
    fn pruned_graphs_are_strongly_connected() {
        for kind in [GraphKind::Grid3dRandpruned, GraphKind::Push] {
            let g = build_graph(kind, 4, &mut rng()).unwrap();
            assert!(g.is_strongly_connected(), "{kind}");
            assert!(g.nodes() > 1);
        }
    }

    #[test]
    fn push_swaps_at_the_wall() {
        // 2×2 grid: agent at 0, box at 1 (east). Pushing east would leave the grid.
        let mut g = push(2, &mut rng()).unwrap();
        g = g.induced(&(0..g.nodes()).collect::<Vec<_>>());
        let id = |a: usize, b: usize| a * 3 + if b > a { b - 1 } else { b };
        assert!(g.neighbors(id(0, 1)).iter().any(|&(t, _)| t == id(1, 0)));
    }

    #[test]
    fn parse_kinds() {
        for k in GraphKind::ALL {
            assert_eq!(k.name().parse::<GraphKind>().unwrap(), k);
        }
        assert!("cube".parse::<GraphKind>().is_err());
    }
}
