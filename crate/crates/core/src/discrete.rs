//! Discrete structure recovery: density-based clustering of reduced state
//! coordinates and extraction of the symbol-labeled transition graph.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::processes::SamplePairSet;

pub const NOISE: isize = -1;

/// DBSCAN over rows of a coordinate matrix. Labels are cluster ids in
/// order of discovery, `-1` marks noise. Core-point expansion proceeds in
/// index order, so the labeling is deterministic for a given input order.
pub fn cluster_states(coords: ArrayView2<'_, f64>, radius: f64, min_pts: usize) -> Result<Vec<isize>> {
    if !(radius > 0.0) {
        return Err(Error::validation("dbscan radius must be positive"));
    }
    let n = coords.nrows();
    let r2 = radius * radius;
    let neighbors = |i: usize| -> Vec<usize> {
        let row_i = coords.row(i);
        (0..n)
            .filter(|&j| {
                let mut d2 = 0.0;
                let row_j = coords.row(j);
                for c in 0..coords.ncols() {
                    let d = row_i[c] - row_j[c];
                    d2 += d * d;
                }
                d2 <= r2
            })
            .collect()
    };

    const UNVISITED: isize = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster: isize = -1;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        cluster += 1;
        labels[i] = cluster;
        let mut frontier = nbrs;
        let mut k = 0;
        while k < frontier.len() {
            let j = frontier[k];
            k += 1;
            if labels[j] == NOISE {
                labels[j] = cluster; // border point reached by a core point
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let jn = neighbors(j);
            if jn.len() >= min_pts {
                frontier.extend(jn);
            }
        }
    }
    Ok(labels.into_iter().map(|l| if l == UNVISITED { NOISE } else { l }).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub id: usize,
    /// Member count / (N - noise count).
    pub probability: f64,
    pub count: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub symbol: u32,
    /// Frequency among counted transitions out of `from`.
    pub probability: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionGraph {
    pub clusters: Vec<ClusterSummary>,
    pub edges: Vec<GraphEdge>,
    pub noise_count: usize,
    /// Consecutive sample pairs skipped because either endpoint was noise.
    pub skipped_pairs: usize,
}

impl TransitionGraph {
    /// Successor-cluster entropy (nats) per (cluster, symbol); near zero
    /// everywhere except where unifilarity genuinely breaks.
    pub fn unifilarity_entropies(&self) -> Vec<(usize, u32, f64)> {
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<(usize, u32), Vec<&GraphEdge>> = BTreeMap::new();
        for e in &self.edges {
            groups.entry((e.from, e.symbol)).or_default().push(e);
        }
        groups
            .into_iter()
            .map(|((from, symbol), edges)| {
                let total: f64 = edges.iter().map(|e| e.count as f64).sum();
                let mut h = 0.0;
                for e in &edges {
                    let p = e.count as f64 / total;
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
                (from, symbol, h)
            })
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph kernel_machine {\n  rankdir=LR;\n");
        for c in &self.clusters {
            out.push_str(&format!(
                "  s{} [label=\"s{} ({:.3})\"];\n",
                c.id, c.id, c.probability
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  s{} -> s{} [label=\"{} | {:.3}\"];\n",
                e.from, e.to, e.symbol, e.probability
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Counts symbol-labeled transitions between clusters of consecutive
/// samples. `symbols[i]` is the symbol emitted between sample `i` and
/// sample `i + 1`; `coords` supplies the centroid geometry.
pub fn extract_graph(
    labels: &[isize],
    pairs: &SamplePairSet,
    symbols: &[u32],
    coords: ArrayView2<'_, f64>,
) -> Result<TransitionGraph> {
    let n = pairs.len();
    if labels.len() != n || symbols.len() != n || coords.nrows() != n {
        return Err(Error::validation("labels, symbols, coords and pairs must align"));
    }
    let n_clusters = labels.iter().filter(|&&l| l >= 0).max().map_or(0, |&l| l as usize + 1);
    if n_clusters == 0 {
        return Err(Error::validation("no clusters to build a graph from"));
    }

    let noise_count = labels.iter().filter(|&&l| l == NOISE).count();
    let denom = (n - noise_count) as f64;
    let mut clusters = Vec::with_capacity(n_clusters);
    for id in 0..n_clusters {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == id as isize).collect();
        let mut centroid = vec![0.0; coords.ncols()];
        for &i in &members {
            for c in 0..coords.ncols() {
                centroid[c] += coords[[i, c]];
            }
        }
        for v in centroid.iter_mut() {
            *v /= members.len() as f64;
        }
        clusters.push(ClusterSummary {
            id,
            probability: members.len() as f64 / denom,
            count: members.len(),
            centroid,
        });
    }

    use std::collections::BTreeMap;
    let mut counts: BTreeMap<(usize, usize, u32), usize> = BTreeMap::new();
    let mut out_totals = vec![0usize; n_clusters];
    let mut skipped = 0usize;
    let mut any_pair = false;
    for i in 0..n - 1 {
        if !pairs.consecutive(i, 1) {
            continue;
        }
        any_pair = true;
        let (a, b) = (labels[i], labels[i + 1]);
        if a == NOISE || b == NOISE {
            skipped += 1;
            continue;
        }
        let (a, b) = (a as usize, b as usize);
        *counts.entry((a, b, symbols[i])).or_insert(0) += 1;
        out_totals[a] += 1;
    }
    if !any_pair {
        return Err(Error::validation("no consecutive sample pairs to extract transitions from"));
    }

    let edges = counts
        .into_iter()
        .map(|((from, to, symbol), count)| GraphEdge {
            from,
            to,
            symbol,
            probability: count as f64 / out_totals[from] as f64,
            count,
        })
        .collect();

    Ok(TransitionGraph { clusters, edges, noise_count, skipped_pairs: skipped })
}

/// Per-sample emitted symbol for discrete processes: the first future
/// observation, rounded to the nearest integer.
pub fn next_symbols(pairs: &SamplePairSet) -> Vec<u32> {
    (0..pairs.len())
        .map(|i| pairs.y[[i, 0]].round().max(0.0) as u32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{window_pairs, Series};
    use ndarray::Array2;

    fn blob_coords() -> Array2<f64> {
        // three point masses, well separated
        let mut pts = Vec::new();
        for c in 0..3 {
            for k in 0..10 {
                pts.push([c as f64 * 10.0 + 0.01 * k as f64, 0.0]);
            }
        }
        Array2::from_shape_fn((30, 2), |(i, j)| pts[i][j])
    }

    #[test]
    fn three_masses_three_clusters() {
        let coords = blob_coords();
        let labels = cluster_states(coords.view(), 0.5, 3).unwrap();
        let max = *labels.iter().max().unwrap();
        assert_eq!(max, 2);
        assert!(labels.iter().all(|&l| l != NOISE));
        // points in the same mass share a label
        for k in 0..3 {
            let block = &labels[k * 10..(k + 1) * 10];
            assert!(block.iter().all(|&l| l == block[0]));
        }
    }

    #[test]
    fn single_blanket_gives_one_cluster() {
        let coords = Array2::from_shape_fn((12, 1), |(i, _)| i as f64 * 0.01);
        let labels = cluster_states(coords.view(), 0.5, 3).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn isolated_points_are_noise() {
        let coords = ndarray::array![[0.0], [0.01], [0.02], [5.0]];
        let labels = cluster_states(coords.view(), 0.1, 2).unwrap();
        assert_eq!(labels[3], NOISE);
        assert!(labels[..3].iter().all(|&l| l == 0));
    }

    fn pairs_from_symbols(symbols: &[f64]) -> SamplePairSet {
        let series = Series::new(
            Array2::from_shape_fn((symbols.len(), 1), |(i, _)| symbols[i]),
            1.0,
            0.0,
        )
        .unwrap();
        window_pairs(&series, 1, 1, 1).unwrap()
    }

    #[test]
    fn single_cluster_graph_has_self_loops_with_symbol_frequencies() {
        let syms = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let pairs = pairs_from_symbols(&syms);
        let n = pairs.len();
        let labels = vec![0isize; n];
        let symbols = next_symbols(&pairs);
        let coords = Array2::zeros((n, 1));
        let g = extract_graph(&labels, &pairs, &symbols, coords.view()).unwrap();
        assert_eq!(g.clusters.len(), 1);
        assert!((g.clusters[0].probability - 1.0).abs() < 1e-12);
        let total: f64 = g.edges.iter().map(|e| e.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for e in &g.edges {
            assert_eq!(e.from, 0);
            assert_eq!(e.to, 0);
        }
    }

    #[test]
    fn graph_is_invariant_under_label_permutation() {
        let syms = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let pairs = pairs_from_symbols(&syms);
        let n = pairs.len();
        // alternate two clusters; then swap ids
        let labels_a: Vec<isize> = (0..n).map(|i| (i % 2) as isize).collect();
        let labels_b: Vec<isize> = (0..n).map(|i| ((i + 1) % 2) as isize).collect();
        let symbols = next_symbols(&pairs);
        let coords = Array2::zeros((n, 1));
        let ga = extract_graph(&labels_a, &pairs, &symbols, coords.view()).unwrap();
        let gb = extract_graph(&labels_b, &pairs, &symbols, coords.view()).unwrap();
        // isomorphic under 0 <-> 1
        for ea in &ga.edges {
            let twin = gb
                .edges
                .iter()
                .find(|eb| eb.from == 1 - ea.from && eb.to == 1 - ea.to && eb.symbol == ea.symbol)
                .unwrap();
            assert_eq!(ea.count, twin.count);
        }
    }

    #[test]
    fn noise_pairs_are_skipped_and_reported() {
        let syms = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let pairs = pairs_from_symbols(&syms);
        let n = pairs.len();
        let mut labels = vec![0isize; n];
        labels[2] = NOISE;
        let symbols = next_symbols(&pairs);
        let coords = Array2::zeros((n, 1));
        let g = extract_graph(&labels, &pairs, &symbols, coords.view()).unwrap();
        assert_eq!(g.noise_count, 1);
        assert_eq!(g.skipped_pairs, 2);
        let total: usize = g.edges.iter().map(|e| e.count).sum();
        assert_eq!(total, n - 1 - 2);
    }

    #[test]
    fn cluster_probabilities_sum_to_one() {
        let syms = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0];
        let pairs = pairs_from_symbols(&syms);
        let n = pairs.len();
        let labels: Vec<isize> = (0..n).map(|i| (i % 3) as isize).collect();
        let symbols = next_symbols(&pairs);
        let coords = Array2::zeros((n, 1));
        let g = extract_graph(&labels, &pairs, &symbols, coords.view()).unwrap();
        let total: f64 = g.clusters.iter().map(|c| c.probability).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
