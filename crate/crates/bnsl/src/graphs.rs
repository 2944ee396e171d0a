//! Graph primitives for structure search: directed/undirected graphs, cycle
//! detection, topological order, moralization, and structural Hamming
//! distance. Adjacency lives in ordered sets so every traversal — and hence
//! every downstream search trace — is deterministic.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Undirected simple graph; each edge is stored once as `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn new(m: usize) -> Self {
        Self { m, edges: BTreeSet::new() }
    }

    /// Complete graph on `m` nodes.
    pub fn complete(m: usize) -> Self {
        let mut g = Self::new(m);
        for u in 0..m {
            for v in (u + 1)..m {
                g.edges.insert((u, v));
            }
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u >= self.m || v >= self.m {
            return Err(Error::InvalidGraph(format!(
                "edge ({u}, {v}) out of range for {} nodes",
                self.m
            )));
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self loop at node {u}")));
        }
        self.edges.insert((u.min(v), u.max(v)));
        Ok(())
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in ascending `(u, v)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Neighbors of `v` in ascending order.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Directed simple graph; arcs `(j, k)` mean `j -> k`. Antiparallel arc pairs
/// may coexist (the structure is not restricted to DAGs); self-loops are
/// rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    m: usize,
    arcs: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(m: usize) -> Self {
        Self { m, arcs: BTreeSet::new() }
    }

    pub fn from_arcs(m: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(m);
        for &(j, k) in arcs {
            g.add_arc(j, k)?;
        }
        Ok(g)
    }

    pub fn add_arc(&mut self, j: usize, k: usize) -> Result<()> {
        if j >= self.m || k >= self.m {
            return Err(Error::InvalidGraph(format!(
                "arc ({j}, {k}) out of range for {} nodes",
                self.m
            )));
        }
        if j == k {
            return Err(Error::InvalidGraph(format!("self loop at node {j}")));
        }
        self.arcs.insert((j, k));
        Ok(())
    }

    pub fn remove_arc(&mut self, j: usize, k: usize) -> bool {
        self.arcs.remove(&(j, k))
    }

    pub fn has_arc(&self, j: usize, k: usize) -> bool {
        self.arcs.contains(&(j, k))
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Arcs in ascending `(j, k)` order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.arcs.iter().copied()
    }

    /// Parents of `k` in ascending order.
    pub fn parents(&self, k: usize) -> Vec<usize> {
        self.arcs
            .iter()
            .filter_map(|&(a, b)| (b == k).then_some(a))
            .collect()
    }

    /// Out-neighbor adjacency lists, each ascending.
    fn out_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for &(j, k) in &self.arcs {
            out[j].push(k);
        }
        out
    }
}

/// A directed cycle, given as the arc sequence that closes it: each arc's
/// head is the next arc's tail and the last head equals the first tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cycle {
    pub arcs: Vec<(usize, usize)>,
}

impl Cycle {
    /// Check the chaining/closure/distinctness invariants.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.arcs.is_empty() {
            return Err(Error::InvalidGraph("empty cycle".into()));
        }
        let n = self.arcs.len();
        let mut seen = BTreeSet::new();
        for i in 0..n {
            let (j, k) = self.arcs[i];
            if j >= m || k >= m || j == k {
                return Err(Error::InvalidGraph(format!("bad cycle arc ({j}, {k})")));
            }
            if !seen.insert((j, k)) {
                return Err(Error::InvalidGraph(format!("repeated cycle arc ({j}, {k})")));
            }
            let (next_tail, _) = self.arcs[(i + 1) % n];
            if k != next_tail {
                return Err(Error::InvalidGraph(format!(
                    "cycle breaks at arc ({j}, {k}): head {k} != next tail {next_tail}"
                )));
            }
        }
        Ok(())
    }
}

/// Find a directed cycle if one exists. The search is a depth-first scan
/// starting from the smallest node, visiting out-neighbors in ascending
/// order, so the result is deterministic.
pub fn find_cycle(g: &DirectedGraph) -> Option<Cycle> {
    let m = g.num_nodes();
    let out = g.out_lists();
    // 0 = unvisited, 1 = on current path, 2 = finished.
    let mut color = vec![0u8; m];
    // (node, index of next out-neighbor to visit)
    let mut path: Vec<(usize, usize)> = Vec::new();

    for start in 0..m {
        if color[start] != 0 {
            continue;
        }
        color[start] = 1;
        path.push((start, 0));
        while let Some(&(u, next)) = path.last() {
            if next < out[u].len() {
                path.last_mut().unwrap().1 += 1;
                let v = out[u][next];
                match color[v] {
                    0 => {
                        color[v] = 1;
                        path.push((v, 0));
                    }
                    1 => {
                        // Back arc (u, v): the cycle is the path from v to u
                        // plus the closing arc.
                        let pos = path.iter().position(|&(n, _)| n == v).unwrap();
                        let mut arcs = Vec::with_capacity(path.len() - pos);
                        for w in pos..path.len() - 1 {
                            arcs.push((path[w].0, path[w + 1].0));
                        }
                        arcs.push((u, v));
                        return Some(Cycle { arcs });
                    }
                    _ => {}
                }
            } else {
                color[u] = 2;
                path.pop();
            }
        }
    }
    None
}

/// Topological order of a DAG (`None` when cyclic). Kahn's algorithm with a
/// min-heap, so ties go to the smallest node index.
pub fn topological_order(g: &DirectedGraph) -> Option<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let m = g.num_nodes();
    let out = g.out_lists();
    let mut indeg = vec![0usize; m];
    for (_, k) in g.arcs() {
        indeg[k] += 1;
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..m)
        .filter(|&v| indeg[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(m);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(v);
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(Reverse(w));
            }
        }
    }
    (order.len() == m).then_some(order)
}

/// Moral graph of a DAG: the skeleton plus an edge between every pair of
/// nodes sharing a child. Errors on cyclic input.
pub fn moralize(g: &DirectedGraph) -> Result<UndirectedGraph> {
    if topological_order(g).is_none() {
        return Err(Error::CyclicInput);
    }
    let mut ug = UndirectedGraph::new(g.num_nodes());
    for (j, k) in g.arcs() {
        ug.add_edge(j, k)?;
    }
    for k in 0..g.num_nodes() {
        let ps = g.parents(k);
        for a in 0..ps.len() {
            for b in (a + 1)..ps.len() {
                ug.add_edge(ps[a], ps[b])?;
            }
        }
    }
    Ok(ug)
}

/// Structural Hamming distance: the minimal number of arc additions,
/// deletions, and reversals transforming `estimate` into `truth`. An
/// opposite-direction pair counts as one reversal. Moves never interact
/// across node pairs, so the distance decomposes pairwise.
pub fn shd(estimate: &DirectedGraph, truth: &DirectedGraph) -> Result<usize> {
    if estimate.num_nodes() != truth.num_nodes() {
        return Err(Error::NodeCountMismatch {
            left: estimate.num_nodes(),
            right: truth.num_nodes(),
        });
    }
    let m = estimate.num_nodes();
    let mut total = 0usize;
    for j in 0..m {
        for k in (j + 1)..m {
            let e = (estimate.has_arc(j, k), estimate.has_arc(k, j));
            let t = (truth.has_arc(j, k), truth.has_arc(k, j));
            total += match (e, t) {
                _ if e == t => 0,
                ((true, false), (false, true)) | ((false, true), (true, false)) => 1,
                _ => (e.0 != t.0) as usize + (e.1 != t.1) as usize,
            };
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Text round-trip: first line is the node count, each following line one
// arc/edge "u v" (0-based). Undirected graphs list each edge once with u < v.
// ---------------------------------------------------------------------------

fn format_lines(m: usize, pairs: impl Iterator<Item = (usize, usize)>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{m}");
    for (u, v) in pairs {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

fn parse_lines(text: &str, path_label: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{path_label}: empty graph file")))?;
    let m: usize = first
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{path_label}: bad node count {first:?}")))?;
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        let mut it = line.split_whitespace();
        let u = it.next().and_then(|t| t.parse::<usize>().ok());
        let v = it.next().and_then(|t| t.parse::<usize>().ok());
        match (u, v, it.next()) {
            (Some(u), Some(v), None) => pairs.push((u, v)),
            _ => {
                return Err(Error::Parse(format!(
                    "{path_label}: bad line {} {line:?}",
                    idx + 1
                )))
            }
        }
    }
    Ok((m, pairs))
}

pub fn write_directed(g: &DirectedGraph, path: &Path) -> Result<()> {
    std::fs::write(path, format_lines(g.num_nodes(), g.arcs()))?;
    Ok(())
}

pub fn read_directed(path: &Path) -> Result<DirectedGraph> {
    let text = std::fs::read_to_string(path)?;
    let (m, pairs) = parse_lines(&text, &path.display().to_string())?;
    DirectedGraph::from_arcs(m, &pairs)
}

pub fn write_undirected(g: &UndirectedGraph, path: &Path) -> Result<()> {
    std::fs::write(path, format_lines(g.num_nodes(), g.edges()))?;
    Ok(())
}

pub fn read_undirected(path: &Path) -> Result<UndirectedGraph> {
    let text = std::fs::read_to_string(path)?;
    let (m, pairs) = parse_lines(&text, &path.display().to_string())?;
    let mut g = UndirectedGraph::new(m);
    for (u, v) in pairs {
        g.add_edge(u, v)?;
    }
    Ok(g)
}
