//! Builds the self-tuning kNN graph on a small point cloud and prints its
//! structure, then checks that the weights ignore scale and rigid motion.

use poissonprop::graph::{build_weight_graph, build_weight_graph_with, knn_distances, Symmetrization};

fn main() -> poissonprop::Result<()> {
    let points: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let t = i as f64 * 0.55;
            vec![t.cos() * (1.0 + 0.1 * i as f64), t.sin()]
        })
        .collect();
    let k = 3;

    let d_k = knn_distances(&points, k)?;
    let mean = build_weight_graph(&points, k)?;
    let max = build_weight_graph_with(&points, k, Symmetrization::Max)?;
    println!(
        "n = {}, K = {k}, stored entries: mean {}, max {}",
        mean.n(),
        mean.nnz(),
        max.nnz()
    );
    println!("components: {}", mean.connected_components());
    for (i, (d, degree)) in d_k.iter().zip(mean.degrees()).take(4).enumerate() {
        let row: Vec<String> = mean.row(i).map(|(j, w)| format!("{j}:{w:.3}")).collect();
        println!("vertex {i}  d_K {d:.3}  degree {degree:.3}  [{}]", row.join(" "));
    }

    let moved: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            vec![
                250.0 * (0.6 * p[0] - 0.8 * p[1]) + 3.0,
                250.0 * (0.8 * p[0] + 0.6 * p[1]) - 7.0,
            ]
        })
        .collect();
    let other = build_weight_graph(&moved, k)?;
    let drift = mean
        .triplets()
        .iter()
        .zip(other.triplets())
        .map(|(a, b)| (a.2 - b.2).abs())
        .fold(0.0, f64::max);
    println!("max weight change after scaling by 250, rotating and shifting: {drift:.2e}");
    Ok(())
}
