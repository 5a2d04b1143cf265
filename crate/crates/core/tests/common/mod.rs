#![allow(dead_code)]

use ndarray::Array2;
use poissonprop::graph::{build_weight_graph, WeightedGraph};
use poissonprop::poisson::{build_source, LabelSource};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// A seeded propagation problem on a connected kNN graph with every class
/// present among the labeled vertices. Points live in 8 to 16 dimensions,
/// the range of the feature vectors the pipeline feeds to the graph.
pub struct Problem {
    pub points: Vec<Vec<f64>>,
    pub graph: WeightedGraph,
    pub labels: Vec<usize>,
    pub source: LabelSource,
    pub k_neighbors: usize,
}

pub fn random_problem(seed: u64) -> Problem {
    random_problem_in(seed, 8..=16)
}

pub fn random_problem_in(seed: u64, dims: std::ops::RangeInclusive<usize>) -> Problem {
    let mut rng = rng(seed);
    let n = rng.random_range(10..=200);
    let k_neighbors = rng.random_range(3..=8);
    let classes = rng.random_range(2..=3);
    let dim = rng.random_range(dims);
    let (points, graph) = loop {
        let points = random_points(&mut rng, n, dim);
        let graph = build_weight_graph(&points, k_neighbors).expect("valid points");
        if graph.is_connected() {
            break (points, graph);
        }
    };
    let fraction = rng.random_range(0.10..=0.20);
    let n_s = ((n as f64 * fraction).round() as usize).max(classes);
    let mut labels: Vec<usize> = (0..n_s).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let source = build_source(&labels, n, classes).expect("valid labels");
    Problem {
        points,
        graph,
        labels,
        source,
        k_neighbors,
    }
}

/// Independent dense oracle for `L R = Q^T` with zero degree-weighted mean:
/// grounds vertex 0, solves the reduced system by Gaussian elimination with
/// partial pivoting, then re-centres.
pub fn grounded_solve(graph: &WeightedGraph, source: &LabelSource) -> Array2<f64> {
    let n = graph.n();
    let q = source.matrix();
    let k = q.nrows();
    let m = n - 1;
    let mut a = vec![vec![0.0; m + k]; m];
    for i in 1..n {
        let row = &mut a[i - 1];
        row[i - 1] = graph.degrees()[i];
        for (j, w) in graph.row(i) {
            if j > 0 {
                row[j - 1] -= w;
            }
        }
        for c in 0..k {
            row[m + c] = q[[c, i]];
        }
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        let (top, below) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in below.iter_mut() {
            let f = row[col] / p;
            if f != 0.0 {
                for (x, y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * y;
                }
            }
        }
    }
    let mut r = Array2::zeros((n, k));
    for c in 0..k {
        for row in (0..m).rev() {
            let mut s = a[row][m + c];
            for j in row + 1..m {
                s -= a[row][j] * r[[j + 1, c]];
            }
            r[[row + 1, c]] = s / a[row][row];
        }
    }
    let degrees = graph.degrees();
    let total: f64 = degrees.iter().sum();
    for c in 0..k {
        let mean: f64 = (0..n).map(|i| degrees[i] * r[[i, c]]).sum::<f64>() / total;
        for i in 0..n {
            r[[i, c]] -= mean;
        }
    }
    r
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
