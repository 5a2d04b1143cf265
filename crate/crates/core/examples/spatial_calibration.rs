//! Similarity map, confidence fusion and spatial consistency calibration on
//! a hand-made 4x4 query.

use ndarray::array;
use poissonprop::poisson::ConfidenceMap;
use poissonprop::prototype::PrototypeVector;
use poissonprop::scc::{fuse_confidence, similarity_map, spatial_consistency_calibrate, Affine, Mlp};
use poissonprop::tensor::FeatureMap;

fn show(title: &str, map: &FeatureMap) {
    println!("{title}");
    for y in 0..map.height() {
        let row: Vec<String> = (0..map.width()).map(|x| format!("{:>7.3}", map.get(0, y, x))).collect();
        println!("  {}", row.join(""));
    }
}

fn main() -> poissonprop::Result<()> {
    // Left half looks like the prototype, right half points the other way;
    // one stray pixel on each side.
    let fg = vec![1.0, 0.2];
    let bg = vec![-1.0, 0.1];
    let pixels: Vec<Vec<f64>> = (0..16)
        .map(|i| {
            let (y, x) = (i / 4, i % 4);
            let left = x < 2;
            let stray = (y, x) == (1, 1) || (y, x) == (2, 3);
            if left != stray {
                fg.clone()
            } else {
                bg.clone()
            }
        })
        .collect();
    let query = FeatureMap::from_pixels(4, 4, &pixels)?;
    let proto = PrototypeVector(fg);

    let sim = similarity_map(&query, &proto, None)?;
    show("cosine similarity", &sim.0);
    let conf = ConfidenceMap::new(4, 4, (0..16).map(|i| if i % 4 < 2 { 0.9 } else { 0.2 }).collect())?;
    let fused = fuse_confidence(&sim, &conf)?;
    show("fused with confidence", &fused.0);
    let smooth = spatial_consistency_calibrate(&fused, None)?;
    show("calibrated (identity h)", &smooth.0);

    let h = Mlp::new(
        Affine::new(array![[2.0], [-1.0]], vec![0.0, 0.5])?,
        Affine::new(array![[0.5, 0.5]], vec![0.0])?,
    )?;
    let shaped = spatial_consistency_calibrate(&fused, Some(&h))?;
    show("calibrated (two-layer h)", &shaped.0);
    Ok(())
}
