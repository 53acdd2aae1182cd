//! k-nearest-neighbor graphs and shortest-path geodesics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::to_row_major;

/// Weight given to edges between coincident points.
pub const DUPLICATE_EDGE_WEIGHT: f64 = 1e-12;

/// Undirected weighted graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    /// `adjacency[i]` lists `(j, weight)` sorted by `j`.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub symmetric: bool,
}

impl NeighborGraph {
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency[i]
            .binary_search_by(|&(v, _)| v.cmp(&j))
            .ok()
            .map(|pos| self.adjacency[i][pos].1)
    }

    /// Component id per node, ids assigned in order of lowest member.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Component sizes, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let comp = self.components();
        let count = comp.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; count];
        for c in comp {
            sizes[c] += 1;
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// Subgraph induced on `keep` (ascending node ids), reindexed `0..keep.len()`.
    pub fn induced(&self, keep: &[usize]) -> NeighborGraph {
        let mut remap = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let adjacency = keep
            .iter()
            .map(|&old| {
                self.adjacency[old]
                    .iter()
                    .filter(|&&(v, _)| remap[v] != usize::MAX)
                    .map(|&(v, w)| (remap[v], w))
                    .collect()
            })
            .collect();
        NeighborGraph { n: keep.len(), k: self.k, adjacency, symmetric: self.symmetric }
    }
}

/// Indices of the `k` rows of `points` closest to `query` (ties by lower
/// index), with their euclidean distances, nearest first. `skip` excludes one row.
pub(crate) fn nearest_rows(
    points: &[f64],
    dim: usize,
    query: &[f64],
    k: usize,
    skip: Option<usize>,
) -> Vec<(usize, f64)> {
    let n = points.len() / dim;
    let mut dists: Vec<(f64, usize)> = (0..n)
        .filter(|&j| Some(j) != skip)
        .map(|j| {
            let row = &points[j * dim..(j + 1) * dim];
            let s: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, j)
        })
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(dists.len());
    if k < dists.len() {
        dists.select_nth_unstable_by(k, by_dist);
        dists.truncate(k);
    }
    dists.sort_by(by_dist);
    dists.into_iter().map(|(s, j)| (j, s.sqrt())).collect()
}

/// Link every row to its `k` euclidean nearest neighbors, then symmetrize by union.
pub fn knn_graph(data: &DMatrix<f64>, k: usize) -> Result<NeighborGraph> {
    let (n, d) = data.shape();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..{n}")));
    }
    let rows = to_row_major(data);
    let directed: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_rows(&rows, d, &rows[i * d..(i + 1) * d], k, Some(i)))
        .collect();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, nbrs) in directed.iter().enumerate() {
        for &(j, dist) in nbrs {
            let w = if dist > 0.0 { dist } else { DUPLICATE_EDGE_WEIGHT };
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }
    for list in &mut adjacency {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        list.dedup_by_key(|e| e.0);
    }
    Ok(NeighborGraph { n, k, adjacency, symmetric: true })
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then node id.
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra; unreachable nodes stay at `+∞`.
pub fn dijkstra(graph: &NeighborGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &graph.adjacency[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Shortest-path distances from each source (every node when `None`), one
/// row per source. Fails on a disconnected graph, reporting component sizes.
pub fn geodesics(graph: &NeighborGraph, sources: Option<&[usize]>) -> Result<DMatrix<f64>> {
    let sizes = graph.component_sizes();
    if sizes.len() > 1 {
        return Err(Error::Disconnected { sizes });
    }
    let all: Vec<usize>;
    let sources = match sources {
        Some(s) => s,
        None => {
            all = (0..graph.n).collect();
            &all
        }
    };
    if let Some(&bad) = sources.iter().find(|&&s| s >= graph.n) {
        return Err(Error::InvalidInput(format!("source {bad} outside graph of {} nodes", graph.n)));
    }
    let rows: Vec<Vec<f64>> = sources.par_iter().map(|&s| dijkstra(graph, s)).collect();
    let mut out = DMatrix::zeros(sources.len(), graph.n);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    if sources.len() == graph.n && sources.iter().enumerate().all(|(i, &s)| i == s) {
        // Path sums may differ in the last bit by direction; keep the smaller.
        for i in 0..graph.n {
            for j in (i + 1)..graph.n {
                let m = out[(i, j)].min(out[(j, i)]);
                out[(i, j)] = m;
                out[(j, i)] = m;
            }
        }
    }
    Ok(out)
}
