//! Pairwise distances and similarity graphs (MST, k-MST, k-NN) over the
//! observations of a series.
//!
//! Graph nodes are the observation indices `0..n` in time order. All tie
//! breaking is lexicographic on `(weight, i, j)`, so outputs are
//! reproducible across platforms and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::series::SeriesTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricTag {
    L2,
    L1,
    User,
}

/// Symmetric matrix of pairwise dissimilarities with zero diagonal.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    metric_tag: MetricTag,
}

impl DistanceMatrix {
    /// Wraps a user-supplied full matrix, validating symmetry, zero
    /// diagonal, nonnegativity and finiteness.
    pub fn from_values(values: Vec<f64>, n: usize) -> Result<Self> {
        if n < 2 || values.len() != n * n {
            return Err(Error::invalid(format!(
                "distance matrix needs n >= 2 and n*n values, got n = {n}, len = {}",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let a = values[i * n + j];
                let b = values[j * n + i];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::invalid(format!("bad distance at ({i}, {j}): {a}")));
                }
                if a != b {
                    return Err(Error::invalid(format!("asymmetry at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix {
            n,
            values,
            metric_tag: MetricTag::User,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric_tag(&self) -> MetricTag {
        self.metric_tag
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// All pairs is zero: the observations are identical.
    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Exact L1/L2 distances between all observation pairs.
pub fn pairwise_distances(series: &SeriesTensor, metric: Metric) -> Result<DistanceMatrix> {
    pairwise_distances_with(series, metric, cfg!(feature = "parallel"))
}

pub(crate) fn pairwise_distances_with(
    series: &SeriesTensor,
    metric: Metric,
    parallel: bool,
) -> Result<DistanceMatrix> {
    let n = series.n();
    let rows = exec::map_indexed(n, parallel, |i| {
        let mut row = vec![0.0; n];
        let a = series.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let b = series.row(j);
            *slot = match metric {
                Metric::L2 => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
            };
        }
        row
    });
    let mut values = Vec::with_capacity(n * n);
    for row in rows {
        values.extend_from_slice(&row);
    }
    Ok(DistanceMatrix {
        n,
        values,
        metric_tag: match metric {
            Metric::L2 => MetricTag::L2,
            Metric::L1 => MetricTag::L1,
        },
    })
}

/// Undirected simple graph over the `n` observations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarityGraph {
    n: usize,
    edges: Vec<(u32, u32)>,
    degrees: Vec<u32>,
}

impl SimilarityGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut normalized: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            normalized.push((a.min(b) as u32, a.max(b) as u32));
        }
        normalized.sort_unstable();
        if normalized.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate edge"));
        }
        let mut degrees = vec![0u32; n];
        for &(a, b) in &normalized {
            degrees[a as usize] += 1;
            degrees[b as usize] += 1;
        }
        Ok(SimilarityGraph {
            n,
            edges: normalized,
            degrees,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node] as usize
    }

    /// Number of unordered edge pairs sharing exactly one node,
    /// `sum_i d_i (d_i - 1) / 2`.
    pub fn shared_pairs(&self) -> u64 {
        self.degrees
            .iter()
            .map(|&d| (d as u64) * (d as u64).saturating_sub(1) / 2)
            .sum()
    }

    /// Total edge weight under a distance matrix.
    pub fn weight(&self, dist: &DistanceMatrix) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b)| dist.get(a as usize, b as usize))
            .sum()
    }

    /// Debug dump: one `i j` pair per line, 1-based node ids.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            out.push_str(&format!("{} {}\n", a + 1, b + 1));
        }
        out
    }

    /// Parses the [`to_edge_list_text`](Self::to_edge_list_text) format.
    pub fn from_edge_list_text(n: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| {
                        Error::invalid(format!("bad edge on line {}: {line:?}", lineno + 1))
                    })
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::invalid(format!(
                    "trailing tokens on line {}: {line:?}",
                    lineno + 1
                )));
            }
            edges.push((a - 1, b - 1));
        }
        SimilarityGraph::new(n, edges)
    }
}

struct Dsu {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
        true
    }
}

/// Edge ids sorted by `(weight, i, j)`; the shared backbone of the MST
/// variants below.
fn sorted_edge_list(dist: &DistanceMatrix) -> Vec<(u32, u32)> {
    let n = dist.n();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i as u32, j as u32));
        }
    }
    edges.sort_by(|&(a1, b1), &(a2, b2)| {
        dist.get(a1 as usize, b1 as usize)
            .total_cmp(&dist.get(a2 as usize, b2 as usize))
            .then(a1.cmp(&a2))
            .then(b1.cmp(&b2))
    });
    edges
}

/// Minimum spanning tree by Kruskal's algorithm; equal-weight candidates are
/// taken in lexicographic `(i, j)` order.
pub fn mst(dist: &DistanceMatrix) -> Result<SimilarityGraph> {
    Ok(k_mst_layers(dist, 1)?.pop().unwrap())
}

/// Union of `k` edge-disjoint spanning trees, each the MST of the distances
/// with all earlier trees' edges removed.
pub fn k_mst(dist: &DistanceMatrix, k: usize) -> Result<SimilarityGraph> {
    let layers = k_mst_layers(dist, k)?;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for layer in &layers {
        edges.extend(layer.edges().iter().map(|&(a, b)| (a as usize, b as usize)));
    }
    SimilarityGraph::new(dist.n(), edges)
}

/// The individual trees of [`k_mst`], in construction order.
///
/// When removing earlier trees disconnects the remaining edge set, the layer
/// is the minimum spanning forest of what is left and a warning is logged.
pub fn k_mst_layers(dist: &DistanceMatrix, k: usize) -> Result<Vec<SimilarityGraph>> {
    let n = dist.n();
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let capacity = n * (n - 1) / 2;
    if k * (n - 1) > capacity {
        return Err(Error::invalid(format!(
            "k = {k} infeasible for n = {n}: {k} trees need {} edges but only {capacity} exist; \
             maximum feasible k is {}",
            k * (n - 1),
            n / 2
        )));
    }
    let sorted = sorted_edge_list(dist);
    let mut used = vec![false; sorted.len()];
    let mut layers = Vec::with_capacity(k);
    for layer_idx in 0..k {
        let mut dsu = Dsu::new(n);
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n - 1);
        for (id, &(a, b)) in sorted.iter().enumerate() {
            if used[id] {
                continue;
            }
            if dsu.union(a, b) {
                used[id] = true;
                edges.push((a as usize, b as usize));
                if edges.len() == n - 1 {
                    break;
                }
            }
        }
        if edges.len() < n - 1 {
            log::warn!(
                "k-MST layer {} is a spanning forest ({} of {} edges): removing earlier trees \
                 disconnected the remaining graph",
                layer_idx + 1,
                edges.len(),
                n - 1
            );
        }
        layers.push(SimilarityGraph::new(n, edges)?);
    }
    Ok(layers)
}

/// Undirected union of each node's `k` nearest neighbors; distance ties are
/// broken by the lower node index.
pub fn knn_graph(dist: &DistanceMatrix, k: usize) -> Result<SimilarityGraph> {
    let n = dist.n();
    if k < 1 || k > n - 1 {
        return Err(Error::invalid(format!(
            "k-NN needs 1 <= k <= n-1, got k = {k}, n = {n}"
        )));
    }
    let mut pairs = Vec::with_capacity(n * k);
    let mut order: Vec<u32> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n as u32).filter(|&j| j as usize != i));
        order.sort_by(|&a, &b| {
            dist.get(i, a as usize)
                .total_cmp(&dist.get(i, b as usize))
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            pairs.push((i.min(j as usize), i.max(j as usize)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    SimilarityGraph::new(n, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Shape;

    fn line_points(xs: &[f64]) -> SeriesTensor {
        SeriesTensor::from_rows(xs.iter().map(|&x| vec![x]).collect(), Shape::OneD(1)).unwrap()
    }

    #[test]
    fn l2_distance_on_the_line() {
        let s = line_points(&[0.0, 3.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        assert_eq!(d.get(0, 1), 3.0);
        assert_eq!(d.get(1, 0), 3.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn identical_observations_give_zero_matrix() {
        let s = SeriesTensor::from_rows(vec![vec![1.0, 2.0]; 4], Shape::OneD(2)).unwrap();
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        assert!(d.is_all_zero());
    }

    #[test]
    fn mst_of_collinear_points_is_the_chain() {
        let s = line_points(&[0.0, 1.0, 2.0, 3.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let tree = mst(&d).unwrap();
        assert_eq!(tree.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn mst_on_two_nodes_is_the_single_edge() {
        let s = line_points(&[0.0, 5.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let tree = mst(&d).unwrap();
        assert_eq!(tree.edges(), &[(0, 1)]);
    }

    #[test]
    fn second_tree_of_collinear_points() {
        let s = line_points(&[0.0, 1.0, 2.0, 3.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let layers = k_mst_layers(&d, 2).unwrap();
        assert_eq!(layers[0].edges(), &[(0, 1), (1, 2), (2, 3)]);
        // skip-one edges plus the only remaining long edge
        assert_eq!(layers[1].edges(), &[(0, 2), (0, 3), (1, 3)]);
        let union = k_mst(&d, 2).unwrap();
        assert_eq!(union.num_edges(), 6);
    }

    #[test]
    fn k_mst_capacity_error_names_max_feasible_k() {
        let s = line_points(&[0.0, 1.0, 2.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let err = k_mst(&d, 2).unwrap_err().to_string();
        assert!(err.contains("maximum feasible k is 1"), "got: {err}");
    }

    #[test]
    fn k1_mst_equals_mst() {
        let s = line_points(&[0.3, -1.0, 2.5, 7.0, 4.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        assert_eq!(k_mst(&d, 1).unwrap(), mst(&d).unwrap());
    }

    #[test]
    fn knn_chain_and_complete() {
        let s = line_points(&[0.0, 1.0, 2.0, 3.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let g1 = knn_graph(&d, 1).unwrap();
        assert_eq!(g1.edges(), &[(0, 1), (1, 2), (2, 3)]);
        let g3 = knn_graph(&d, 3).unwrap();
        assert_eq!(g3.num_edges(), 6);
        assert!(knn_graph(&d, 4).is_err());
    }

    #[test]
    fn knn_ties_break_to_lower_index() {
        // four identical points: every neighbor tie resolves to the
        // smallest index, so 1-NN picks node 0 for everyone but node 0
        let s = SeriesTensor::from_rows(vec![vec![2.0]; 4], Shape::OneD(1)).unwrap();
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let g = knn_graph(&d, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn degree_sum_is_twice_edge_count() {
        let s = line_points(&[0.0, 0.5, 1.7, 3.0, 6.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let g = k_mst(&d, 2).unwrap();
        let degree_sum: usize = (0..g.n()).map(|i| g.degree(i)).sum();
        assert_eq!(degree_sum, 2 * g.num_edges());
    }

    #[test]
    fn edge_list_text_round_trip() {
        let s = line_points(&[0.0, 1.0, 2.0, 3.0]);
        let d = pairwise_distances(&s, Metric::L2).unwrap();
        let g = k_mst(&d, 2).unwrap();
        let text = g.to_edge_list_text();
        assert!(text.starts_with("1 2\n"));
        let parsed = SimilarityGraph::from_edge_list_text(g.n(), &text).unwrap();
        assert_eq!(parsed, g);
    }

    #[test]
    fn user_matrix_validation() {
        assert!(DistanceMatrix::from_values(vec![0.0, 1.0, 2.0, 0.0], 2).is_err());
        assert!(DistanceMatrix::from_values(vec![0.0, 1.0, 1.0, 0.0], 2).is_ok());
    }
}
