//! Poisson label propagation on the two-moons toy problem with a handful of
//! labels per class.
//!
//! cargo run --release --example two_moons -- [labels_per_class] [seed]

use std::f64::consts::PI;

use poissonprop::graph::build_weight_graph;
use poissonprop::poisson::{build_source, poisson_solve_iterative, IterationOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let jitter = Normal::new(0.0, noise).unwrap();
    let mut points = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.random_range(0.0..PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        points.push(vec![x + jitter.sample(rng), y + jitter.sample(rng)]);
        classes.push(class);
    }
    (points, classes)
}

fn main() -> poissonprop::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, classes) = moons(1000, 0.1, &mut rng);

    // Labeled vertices go first, as the solver expects.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let mut labeled = Vec::new();
    for class in 0..2 {
        labeled.extend(order.iter().copied().filter(|&i| classes[i] == class).take(per_class));
    }
    let rest = order.iter().copied().filter(|i| !labeled.contains(i));
    let perm: Vec<usize> = labeled.iter().copied().chain(rest).collect();
    let pts: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
    let truth: Vec<usize> = perm.iter().map(|&i| classes[i]).collect();

    let graph = build_weight_graph(&pts, 10)?;
    let source = build_source(&truth[..labeled.len()], pts.len(), 2)?;
    let opts = IterationOptions {
        tol: 1e-8,
        max_iterations: 200_000,
    };
    let res = poisson_solve_iterative(&graph, &source, opts)?;

    let unlabeled = labeled.len()..pts.len();
    let correct = unlabeled
        .clone()
        .filter(|&i| usize::from(res.r[[i, 1]] > res.r[[i, 0]]) == truth[i])
        .count();
    println!(
        "{} labels, {} iterations ({:?}), accuracy {:.2}% on {} unlabeled points",
        labeled.len(),
        res.iterations,
        res.stop,
        100.0 * correct as f64 / unlabeled.len() as f64,
        unlabeled.len()
    );
    Ok(())
}
