//! kNN similarity graph over prototype and pixel vertices, and its
//! unnormalized Laplacian `L = D - W`.
//!
//! Raw weights use a self-tuning Gaussian kernel,
//! `w~_ij = exp(-4 |p_i - p_j|^2 / d_K(p_i)^2)`, evaluated only for the `K`
//! nearest neighbours of `p_i`. The raw matrix is not symmetric because the
//! bandwidth depends on `i`, so it is symmetrized before use.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floor applied to the K-th neighbour distance.
pub const MIN_KNN_DISTANCE: f64 = 1e-12;

/// Default neighbour count.
pub const DEFAULT_K: usize = 10;

/// Vertex collection in support, auxiliary, query order. The first `n_s`
/// vertices carry class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    points: Vec<Vec<f64>>,
    n_s: usize,
    n_a: usize,
    n_q: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl VertexSet {
    pub fn new(
        support: Vec<Vec<f64>>,
        labels: Vec<usize>,
        auxiliary: Vec<Vec<f64>>,
        query: Vec<Vec<f64>>,
        classes: usize,
    ) -> Result<Self> {
        if support.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} support vertices but {} labels",
                support.len(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::InvalidParameter("class count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel(format!("class {bad} with k = {classes}")));
        }
        let (n_s, n_a, n_q) = (support.len(), auxiliary.len(), query.len());
        let mut points = support;
        points.extend(auxiliary);
        points.extend(query);
        check_points(&points)?;
        Ok(Self {
            points,
            n_s,
            n_a,
            n_q,
            labels,
            classes,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.n_s, self.n_a, self.n_q)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Classes with no labeled vertex. Propagation still runs when this is
    /// non-empty, but the source term loses those classes.
    pub fn missing_classes(&self) -> Vec<usize> {
        (0..self.classes).filter(|c| !self.labels.contains(c)).collect()
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::LengthMismatch {
            left: dim,
            right: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor("non-finite coordinate".into()));
    }
    Ok(dim)
}

/// How the asymmetric raw kernel is made symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Symmetrization {
    /// `(w~_ij + w~_ji) / 2`
    #[default]
    Mean,
    /// `max(w~_ij, w~_ji)`
    Max,
}

/// Sparse symmetric weight matrix in CSR form with cached degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degrees: Vec<f64>,
}

impl WeightedGraph {
    /// Builds a graph from `(i, j, w)` entries. Every off-diagonal entry must
    /// appear in both directions with bit-identical weight.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, w) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!("edge ({i}, {j}) with n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter(format!("edge ({i}, {j}) has weight {w}")));
            }
            if entries.insert((i, j), w).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate edge ({i}, {j})")));
            }
        }
        for (&(i, j), &w) in &entries {
            if entries.get(&(j, i)).map(|v| v.to_bits()) != Some(w.to_bits()) {
                return Err(Error::InvalidParameter(format!("edge ({i}, {j}) is not symmetric")));
            }
        }
        let graph = Self::from_sorted(n, entries);
        // A vertex with no edges is its own component.
        if graph.degrees.iter().any(|&d| d <= 0.0) {
            return Err(Error::DisconnectedGraph {
                components: graph.connected_components(),
            });
        }
        Ok(graph)
    }

    fn from_sorted(n: usize, entries: BTreeMap<(usize, usize), f64>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for (&(i, j), &w) in &entries {
            row_ptr[i + 1] += 1;
            cols.push(j);
            vals.push(w);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let degrees = (0..n).map(|i| vals[row_ptr[i]..row_ptr[i + 1]].iter().sum()).collect();
        Self {
            row_ptr,
            cols,
            vals,
            degrees,
        }
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Number of stored (directed) entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Neighbours of `i` as `(j, w_ij)`, sorted by `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n())
            .flat_map(|i| self.row(i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut w = Array2::zeros((n, n));
        for (i, j, v) in self.triplets() {
            w[[i, j]] = v;
        }
        w
    }

    pub fn connected_components(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for (v, w) in self.row(u) {
                    if w > 0.0 && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components() == 1
    }

    /// Fails with `DisconnectedGraph` unless the graph has one component.
    pub fn ensure_connected(&self) -> Result<()> {
        match self.connected_components() {
            1 => Ok(()),
            components => Err(Error::DisconnectedGraph { components }),
        }
    }
}

/// Squared distances from `i` to every other point, sorted ascending with
/// ties broken by index.
fn sorted_neighbours(points: &[Vec<f64>], i: usize) -> Vec<(f64, usize)> {
    let pi = &points[i];
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, pj)| {
            let s = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (s, j)
        })
        .collect();
    d.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

fn check_knn_input(points: &[Vec<f64>], k: usize) -> Result<()> {
    check_points(points)?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be positive".into()));
    }
    let n = points.len();
    if n < 2 || k > n - 1 {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}

/// `K` nearest neighbours of every point: `(d_K, [(j, |p_i - p_j|^2)])`.
fn knn_table(points: &[Vec<f64>], k: usize) -> Vec<(f64, Vec<(usize, f64)>)> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut d = sorted_neighbours(points, i);
            d.truncate(k);
            let dk = d[k - 1].0.sqrt().max(MIN_KNN_DISTANCE);
            (dk, d.into_iter().map(|(s, j)| (j, s)).collect())
        })
        .collect()
}

/// Euclidean distance from each point to its K-th nearest other point,
/// floored at [`MIN_KNN_DISTANCE`].
pub fn knn_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check_knn_input(points, k)?;
    Ok(knn_table(points, k).into_iter().map(|(dk, _)| dk).collect())
}

/// kNN graph with mean symmetrization.
pub fn build_weight_graph(points: &[Vec<f64>], k: usize) -> Result<WeightedGraph> {
    build_weight_graph_with(points, k, Symmetrization::Mean)
}

pub fn build_weight_graph_with(points: &[Vec<f64>], k: usize, symmetrization: Symmetrization) -> Result<WeightedGraph> {
    check_knn_input(points, k)?;
    let table = knn_table(points, k);

    // (min, max) -> (w~_min,max, w~_max,min); merged sequentially so the
    // result does not depend on thread scheduling.
    let mut pairs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (i, (dk, nbrs)) in table.iter().enumerate() {
        let dk2 = dk * dk;
        for &(j, dist2) in nbrs {
            let w = (-4.0 * dist2 / dk2).exp();
            let entry = pairs.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
            if i < j {
                entry.0 = w;
            } else {
                entry.1 = w;
            }
        }
    }
    let mut entries = BTreeMap::new();
    for ((i, j), (a, b)) in pairs {
        let w = match symmetrization {
            Symmetrization::Mean => (a + b) / 2.0,
            Symmetrization::Max => a.max(b),
        };
        entries.insert((i, j), w);
        entries.insert((j, i), w);
    }
    Ok(WeightedGraph::from_sorted(points.len(), entries))
}

/// `(D - W) X` without forming `L`. Rows are computed independently with a
/// fixed summation order.
pub fn laplacian_apply(graph: &WeightedGraph, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = graph.n();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Laplacian of {n} vertices applied to {} rows",
            x.nrows()
        )));
    }
    let mut out = Array2::zeros(x.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let d = graph.degrees[i];
            for (c, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, w) in graph.row(i) {
                    acc += w * x[[j, c]];
                }
                *o = d * x[[i, c]] - acc;
            }
        });
    Ok(out)
}
