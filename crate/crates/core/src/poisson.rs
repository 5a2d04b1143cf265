//! Poisson learning on a weighted graph.
//!
//! Labeled vertices inject the centered source `y_i - y_bar`; the solution
//! `R` of `L R = Q^T` with `sum_i d_i R[i, :] = 0` is found by the relaxation
//!
//! ```text
//! R_{t+1} = R_t + D^{-1} (Q^T - L R_t),    R_0 = 0
//! ```
//!
//! Premultiplying by `d^T` kills both `Q^T` (its columns sum to zero) and
//! `L R_t` (`1^T L = 0`), so every iterate keeps the degree-weighted mean at
//! zero. [`poisson_solve_direct`] is a dense least-squares reference used to
//! check the iteration.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{laplacian_apply, WeightedGraph};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
/// Largest graph accepted by [`poisson_solve_direct`].
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

/// Centered label matrix `Q = [Y - Y_bar, 0]`, stored `k x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSource {
    q: Array2<f64>,
    n_labeled: usize,
}

impl LabelSource {
    pub fn classes(&self) -> usize {
        self.q.nrows()
    }

    pub fn n(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_labeled(&self) -> usize {
        self.n_labeled
    }

    /// The `k x n` matrix `Q`.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    /// True when every labeled vertex has the same class, so `Q == 0`.
    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|&v| v == 0.0)
    }
}

/// Builds `Q` from the class indices of the first `labels.len()` vertices.
pub fn build_source(labels: &[usize], n: usize, k: usize) -> Result<LabelSource> {
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("class count must be positive".into()));
    }
    if labels.len() > n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} vertices",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel(format!("class {bad} with k = {k}")));
    }
    let n_s = labels.len();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    // (n_s y_i - counts) / n_s rounds once per entry, so swapping the two
    // classes of a k = 2 problem negates Q bit for bit.
    let mut q = Array2::zeros((k, n));
    for (i, &l) in labels.iter().enumerate() {
        for (c, &count) in counts.iter().enumerate() {
            let y = if c == l { n_s } else { 0 };
            q[[c, i]] = (y as f64 - count as f64) / n_s as f64;
        }
    }
    Ok(LabelSource { q, n_labeled: n_s })
}

/// Like [`build_source`] but from one-hot rows (`n_s x k`).
pub fn build_source_one_hot(one_hot: ArrayView2<'_, f64>, n: usize) -> Result<LabelSource> {
    let labels = one_hot
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v == 1.0)
                .map(|(c, _)| c)
                .collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            match ones.as_slice() {
                [c] if zeros + 1 == row.len() => Ok(*c),
                _ => Err(Error::InvalidLabel(format!("row {i} is not one-hot"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    build_source(&labels, n, one_hot.ncols())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Max-norm of the last update fell below the tolerance.
    Converged,
    /// Iteration cap reached first.
    MaxIterations,
    /// Dense solve; no iteration.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverWarning {
    /// All labeled vertices share one class; the solution is identically zero.
    ZeroSource,
}

impl std::fmt::Display for SolverWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverWarning::ZeroSource => {
                f.write_str("all labeled vertices share one class; propagation result is zero")
            }
        }
    }
}

/// `n x k` solution together with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub r: Array2<f64>,
    pub iterations: usize,
    pub final_step: f64,
    pub stop: StopReason,
    pub warnings: Vec<SolverWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

fn check_shapes(graph: &WeightedGraph, source: &LabelSource) -> Result<()> {
    if graph.n() != source.n() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} vertices, source has {}",
            graph.n(),
            source.n()
        )));
    }
    Ok(())
}

/// One relaxation step. Returns the max-norm of the update.
fn relax(graph: &WeightedGraph, qt: &Array2<f64>, r: &Array2<f64>, next: &mut Array2<f64>) -> f64 {
    let degrees = graph.degrees();
    next.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let d = degrees[i];
            let mut step = 0.0f64;
            for (c, out) in row.iter_mut().enumerate() {
                let mut wr = 0.0;
                for (j, w) in graph.row(i) {
                    wr += w * r[[j, c]];
                }
                let lr = d * r[[i, c]] - wr;
                let delta = (qt[[i, c]] - lr) / d;
                *out = r[[i, c]] + delta;
                step = step.max(delta.abs());
            }
            step
        })
        .reduce(|| 0.0, f64::max)
}

/// Runs the relaxation from `R_0 = 0`, calling `observe(t, &R_t)` after each
/// step `t = 1, 2, ...`.
pub fn poisson_solve_iterative_with<F>(
    graph: &WeightedGraph,
    source: &LabelSource,
    options: IterationOptions,
    mut observe: F,
) -> Result<PropagationResult>
where
    F: FnMut(usize, &Array2<f64>),
{
    check_shapes(graph, source)?;
    graph.ensure_connected()?;
    if options.tol.is_nan() || options.tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance {} must be positive",
            options.tol
        )));
    }
    if options.max_iterations == 0 {
        return Err(Error::InvalidParameter("iteration cap must be positive".into()));
    }
    let qt = source.q.t().to_owned();
    let mut r = Array2::zeros((graph.n(), source.classes()));
    let mut next = r.clone();
    let mut iterations = 0;
    let mut final_step = 0.0;
    let mut stop = StopReason::MaxIterations;
    while iterations < options.max_iterations {
        final_step = relax(graph, &qt, &r, &mut next);
        std::mem::swap(&mut r, &mut next);
        iterations += 1;
        observe(iterations, &r);
        if final_step < options.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(PropagationResult {
        r,
        iterations,
        final_step,
        stop,
        warnings: warnings_for(source),
    })
}

pub fn poisson_solve_iterative(
    graph: &WeightedGraph,
    source: &LabelSource,
    options: IterationOptions,
) -> Result<PropagationResult> {
    poisson_solve_iterative_with(graph, source, options, |_, _| {})
}

fn warnings_for(source: &LabelSource) -> Vec<SolverWarning> {
    if source.is_zero() {
        vec![SolverWarning::ZeroSource]
    } else {
        Vec::new()
    }
}

/// Dense least-squares solve of `L R = Q^T`, shifted so that each column has
/// zero degree-weighted mean.
pub fn poisson_solve_direct(graph: &WeightedGraph, source: &LabelSource) -> Result<PropagationResult> {
    check_shapes(graph, source)?;
    let n = graph.n();
    if n > DIRECT_SOLVE_LIMIT {
        return Err(Error::TooLargeForDirect {
            n,
            limit: DIRECT_SOLVE_LIMIT,
        });
    }
    graph.ensure_connected()?;
    let k = source.classes();

    let mut l = DMatrix::<f64>::zeros(n, n);
    for (i, j, w) in graph.triplets() {
        l[(i, j)] = -w;
    }
    for (i, &d) in graph.degrees().iter().enumerate() {
        l[(i, i)] = d;
    }
    let rhs = DMatrix::from_fn(n, k, |i, c| source.q[[c, i]]);

    let svd = l.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let sol = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::InvalidParameter(format!("least-squares solve failed: {e}")))?;

    let mut r = Array2::from_shape_fn((n, k), |(i, c)| sol[(i, c)]);
    degree_center(&mut r, graph.degrees());
    Ok(PropagationResult {
        r,
        iterations: 0,
        final_step: 0.0,
        stop: StopReason::Direct,
        warnings: warnings_for(source),
    })
}

/// Subtracts each column's degree-weighted mean.
pub fn degree_center(r: &mut Array2<f64>, degrees: &[f64]) {
    let total: f64 = degrees.iter().sum();
    for mut col in r.axis_iter_mut(Axis(1)) {
        let mean = col.iter().zip(degrees).map(|(x, d)| x * d).sum::<f64>() / total;
        col.mapv_inplace(|x| x - mean);
    }
}

/// `sum_i d_i R[i, :]` as a k-vector.
pub fn degree_weighted_sum(r: ArrayView2<'_, f64>, degrees: &[f64]) -> Vec<f64> {
    r.axis_iter(Axis(1))
        .map(|col| col.iter().zip(degrees).map(|(x, d)| x * d).sum())
        .collect()
}

/// Entry-wise residual `L R - Q^T`.
pub fn residual(graph: &WeightedGraph, source: &LabelSource, r: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_shapes(graph, source)?;
    let mut lr = laplacian_apply(graph, r)?;
    Zip::from(&mut lr).and(&source.q.t()).for_each(|a, &b| *a -= b);
    Ok(lr)
}

/// Per-pixel class probabilities reduced to the foreground (last) channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} confidence map",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("confidence values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Softmax over the `k` channels of every pixel; `logits` is `k x (H*W)`.
pub fn softmax_channels(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - max).exp());
        let total: f64 = col.sum();
        col.mapv_inplace(|v| v / total);
    }
    out
}

/// Takes the last `n_q` rows of `R` (the query pixels), reshapes them to
/// `k x H x W`, applies a per-pixel softmax and returns channel `k - 1`.
pub fn extract_confidence_map(
    result: &PropagationResult,
    n_q: usize,
    height: usize,
    width: usize,
) -> Result<ConfidenceMap> {
    let n = result.r.nrows();
    if n_q != height * width || n_q > n || n_q == 0 {
        return Err(Error::ShapeMismatch(format!(
            "n_q = {n_q} for a {height}x{width} map with {n} solution rows"
        )));
    }
    let k = result.r.ncols();
    if k == 0 {
        return Err(Error::ShapeMismatch("solution has no class columns".into()));
    }
    let u = result.r.slice(ndarray::s![n - n_q.., ..]).t().to_owned();
    let probs = softmax_channels(u.view());
    let fg = probs.row(k - 1).iter().map(|p| p.clamp(0.0, 1.0)).collect();
    ConfidenceMap::new(height, width, fg)
}
