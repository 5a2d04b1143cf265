//! Local prototypes, their labels from a support mask, and the global
//! masked-average prototype.

use poissonprop::prototype::{assign_prototype_labels, local_prototype_pool, masked_average_pool};
use poissonprop::tensor::{avg_pool, FeatureMap, SoftMask};

fn main() -> poissonprop::Result<()> {
    let (h, w) = (6, 8);
    let pixels: Vec<Vec<f64>> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            vec![y as f64, x as f64, if x >= 4 { 1.0 } else { 0.0 }]
        })
        .collect();
    let map = FeatureMap::from_pixels(h, w, &pixels)?;
    let mask = SoftMask::new(h, w, pixels.iter().map(|p| p[2]).collect())?;

    let window = (3, 2);
    let protos = local_prototype_pool(&map, window)?;
    let occupancy = avg_pool(&FeatureMap::new(1, h, w, mask.data().to_vec())?, window, window)?;
    let grid = SoftMask::new(occupancy.height(), occupancy.width(), occupancy.data().to_vec())?;
    let labeled = assign_prototype_labels(&protos, &grid, 0.5)?;
    println!(
        "{} prototypes on a {}x{} grid",
        labeled.len(),
        grid.height(),
        grid.width()
    );
    for p in &labeled {
        println!("  {:?}  {:?}  {:?}", p.grid_pos, p.label, p.vector);
    }
    println!("global prototype {:?}", masked_average_pool(&map, &mask)?.0);
    Ok(())
}
