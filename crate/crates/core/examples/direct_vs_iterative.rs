//! Compares the relaxation solver with the dense least-squares solve and
//! shows how the tolerance on the step relates to the distance from the
//! exact solution.

use poissonprop::graph::build_weight_graph;
use poissonprop::poisson::{
    build_source, degree_weighted_sum, poisson_solve_direct, poisson_solve_iterative, IterationOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> poissonprop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let points: Vec<Vec<f64>> = (0..150)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let graph = build_weight_graph(&points, 6)?;
    let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
    let source = build_source(&labels, graph.n(), 3)?;
    let exact = poisson_solve_direct(&graph, &source)?;

    println!("{dim}-dimensional points, {} vertices, 3 classes", graph.n());
    println!("     tol  iterations  max |R - R_direct|  max |sum d_i R_i|");
    for tol in [1e-4, 1e-6, 1e-8, 1e-10, 1e-12] {
        let res = poisson_solve_iterative(
            &graph,
            &source,
            IterationOptions {
                tol,
                max_iterations: 1_000_000,
            },
        )?;
        let err = res
            .r
            .iter()
            .zip(&exact.r)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let drift = degree_weighted_sum(res.r.view(), graph.degrees())
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max);
        println!("{tol:>8.0e}  {:>10}  {err:>18.3e}  {drift:>17.3e}", res.iterations);
    }
    Ok(())
}
