//! DSC and Dice loss on a few masks.

use poissonprop::metrics::{dice_loss, dsc, iou, BinaryMask, DEFAULT_DICE_EPS, DSC_CONVENTION};

fn square(size: usize, top: usize, left: usize, side: usize) -> BinaryMask {
    let data = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            y >= top && y < top + side && x >= left && x < left + side
        })
        .collect();
    BinaryMask::new(size, size, data).unwrap()
}

fn main() -> poissonprop::Result<()> {
    println!("{DSC_CONVENTION}");
    let truth = square(10, 2, 2, 5);
    for shift in 0..6 {
        let pred = square(10, 2, 2 + shift, 5);
        println!(
            "shift {shift}: dsc {:.3}  iou {:.3}  dice loss {:.3}",
            dsc(&pred, &truth)?,
            iou(&pred, &truth)?,
            dice_loss(&pred.to_soft(), &truth.to_soft(), DEFAULT_DICE_EPS)?
        );
    }
    let empty = square(10, 0, 0, 0);
    println!("empty vs empty: dsc {}", dsc(&empty, &empty)?);
    Ok(())
}
