use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Weighted graph stored as out-adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    directed: bool,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Graph {
    pub fn new(nodes: usize, directed: bool) -> Self {
        Self { adj: vec![Vec::new(); nodes], directed }
    }

    /// Adds `a -> b`, and `b -> a` as well when the graph is undirected.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) -> Result<()> {
        if a >= self.adj.len() || b >= self.adj.len() {
            return Err(Error::InvalidConfig(format!("edge ({a}, {b}) outside {} nodes", self.adj.len())));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!("edge weight must be finite and non-negative, got {w}")));
        }
        self.adj[a].push((b, w));
        if !self.directed {
            self.adj[b].push((a, w));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    /// Every stored arc `(source, target, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(a, out)| out.iter().map(move |&(b, w)| (a, b, w)))
    }

    pub fn reversed(&self) -> Self {
        let mut adj = vec![Vec::new(); self.adj.len()];
        for (a, b, w) in self.edges() {
            adj[b].push((a, w));
        }
        Self { adj, directed: self.directed }
    }

    /// Single-source distances; unreachable nodes are `+inf`.
    pub fn dijkstra(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adj.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, w) in &self.adj[v] {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Entry(nd, u));
                }
            }
        }
        dist
    }

    /// Rows of `d(source, ·)` for each source, computed in parallel.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<Vec<f64>> {
        sources.par_iter().map(|&s| self.dijkstra(s)).collect()
    }

    /// Strongly connected components (iterative Kosaraju), largest first.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.adj.len();
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut stack = vec![(root, 0usize)];
            while let Some((v, i)) = stack.pop() {
                if i < self.adj[v].len() {
                    stack.push((v, i + 1));
                    let u = self.adj[v][i].0;
                    if !seen[u] {
                        seen[u] = true;
                        stack.push((u, 0));
                    }
                } else {
                    order.push(v);
                }
            }
        }
        let rev = self.reversed();
        let mut comp = vec![usize::MAX; n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for &root in order.iter().rev() {
            if comp[root] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![root];
            comp[root] = id;
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for &(u, _) in &rev.adj[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = id;
                        members.push(u);
                        stack.push(u);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.adj.is_empty() || self.strongly_connected_components()[0].len() == self.adj.len()
    }

    /// Subgraph on `keep` (sorted), relabelled `0..keep.len()`.
    pub fn induced(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.adj.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let adj = keep
            .iter()
            .map(|&old| self.adj[old].iter().filter(|(u, _)| map[*u] != usize::MAX).map(|&(u, w)| (map[u], w)).collect())
            .collect();
        Self { adj, directed: self.directed }
    }

    /// Largest strongly connected component as its own graph.
    pub fn largest_scc(&self) -> Result<Self> {
        let comps = self.strongly_connected_components();
        match comps.first() {
            Some(c) if !c.is_empty() => Ok(self.induced(c)),
            _ => Err(Error::Degenerate("graph has no strongly connected component".into())),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["source", "target", "weight"])?;
        for (a, b, wt) in self.edges() {
            out.write_record([a.to_string(), b.to_string(), format!("{wt}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Exact lengths for every `(source, target)` combination:
/// `out[i][j] = d(sources[i], targets[j])`.
pub fn shortest_paths(graph: &Graph, sources: &[usize], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = graph.nodes();
    if let Some(&bad) = sources.iter().chain(targets).find(|&&v| v >= n) {
        return Err(Error::InvalidConfig(format!("node {bad} outside graph of {n} nodes")));
    }
    graph
        .distances_from(sources)
        .into_iter()
        .zip(sources)
        .map(|(row, &s)| {
            targets
                .iter()
                .map(|&t| if row[t].is_finite() { Ok(row[t]) } else { Err(Error::Unreachable { from: s, to: t }) })
                .collect()
        })
        .collect()
}
