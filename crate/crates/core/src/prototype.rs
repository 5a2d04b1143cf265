//! Local and global prototypes extracted from feature maps.

use crate::error::{Error, Result};
use crate::tensor::{avg_pool, FeatureMap, SoftMask};

/// Default occupancy threshold above which a support window is foreground.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrototypeLabel {
    Foreground,
    Background,
    Unlabeled,
}

impl PrototypeLabel {
    /// Class index used on the propagation graph. Foreground is the last
    /// class so that the confidence channel is the last softmax channel.
    pub fn class_index(self) -> Option<usize> {
        match self {
            PrototypeLabel::Background => Some(0),
            PrototypeLabel::Foreground => Some(1),
            PrototypeLabel::Unlabeled => None,
        }
    }
}

/// Average of one pooling window, with its cell position on the pooled grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPrototype {
    pub vector: Vec<f64>,
    pub grid_pos: (usize, usize),
    pub label: PrototypeLabel,
}

/// Mask-weighted mean of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeVector(pub Vec<f64>);

impl PrototypeVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shape of the grid produced by non-overlapping pooling with `window`.
pub fn pooled_grid(map: &FeatureMap, window: (usize, usize)) -> (usize, usize) {
    (map.height() / window.0.max(1), map.width() / window.1.max(1))
}

/// Non-overlapping average pooling, one unlabeled prototype per grid cell in
/// row-major order.
pub fn local_prototype_pool(map: &FeatureMap, window: (usize, usize)) -> Result<Vec<LocalPrototype>> {
    let pooled = avg_pool(map, window, window)?;
    let (gh, gw) = pooled.spatial();
    let mut out = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        for j in 0..gw {
            out.push(LocalPrototype {
                vector: pooled.pixel(i, j),
                grid_pos: (i, j),
                label: PrototypeLabel::Unlabeled,
            });
        }
    }
    Ok(out)
}

/// Labels each support prototype foreground iff its mask cell is `>= tau`.
pub fn assign_prototype_labels(protos: &[LocalPrototype], mask: &SoftMask, tau: f64) -> Result<Vec<LocalPrototype>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("label threshold {tau} not in (0, 1)")));
    }
    let (mh, mw) = mask.dims();
    let grid = protos
        .iter()
        .fold((0, 0), |(h, w), p| (h.max(p.grid_pos.0 + 1), w.max(p.grid_pos.1 + 1)));
    if protos.len() != mh * mw || grid != (mh, mw) {
        return Err(Error::GridMismatch { mask: (mh, mw), grid });
    }
    Ok(protos
        .iter()
        .map(|p| {
            let (i, j) = p.grid_pos;
            let label = if mask.get(i, j) >= tau {
                PrototypeLabel::Foreground
            } else {
                PrototypeLabel::Background
            };
            LocalPrototype { label, ..p.clone() }
        })
        .collect())
}

/// Mask-weighted channel-wise mean of `map`.
pub fn masked_average_pool(map: &FeatureMap, mask: &SoftMask) -> Result<PrototypeVector> {
    if mask.dims() != map.spatial() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs feature map {:?}",
            mask.dims(),
            map.spatial()
        )));
    }
    let total = mask.sum();
    if total <= 0.0 {
        return Err(Error::DegenerateMask);
    }
    let plane = map.height() * map.width();
    let weights = mask.data();
    let proto = (0..map.channels())
        .map(|c| {
            let channel = &map.data()[c * plane..(c + 1) * plane];
            channel.iter().zip(weights).map(|(f, m)| f * m).sum::<f64>() / total
        })
        .collect();
    Ok(PrototypeVector(proto))
}
