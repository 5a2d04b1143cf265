//! Overlap metrics for segmentation masks.
//!
//! [`dsc`] reports the Dice similarity *score* `2|A∩B| / (|A| + |B|)`, where
//! higher is better. `1 - dsc` is the Dice distance.

use crate::error::{Error, Result};
use crate::tensor::SoftMask;

/// Default smoothing term of [`dice_loss`].
pub const DEFAULT_DICE_EPS: f64 = 1e-6;

/// Human-readable description of the DSC convention.
pub const DSC_CONVENTION: &str = "score convention: DSC = 2|A∩B|/(|A|+|B|), 1 = perfect overlap";

/// Strictly binary `H x W` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// Accepts only values that are exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::NotBinary)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, data)
    }

    /// Pixels with `value >= threshold` are set.
    pub fn threshold(height: usize, width: usize, values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| v >= threshold).collect())
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask::new(self.height, self.width, self.to_values()).expect("binary values lie in [0, 1]")
    }
}

/// Soft Dice loss `1 - (2 sum(XY) + eps) / (sum X + sum Y + eps)`.
pub fn dice_loss(x: &SoftMask, y: &SoftMask, eps: f64) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "smoothing term {eps} must be positive"
        )));
    }
    let inter: f64 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let card = x.sum() + y.sum();
    Ok((1.0 - (2.0 * inter + eps) / (card + eps)).clamp(0.0, 1.0))
}

/// Dice similarity score. Two empty masks score 1.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    let union = a.data.iter().zip(&b.data).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
