//! Dense containers and the elementary kernels built on them: average
//! pooling, cosine similarity and area-averaged mask downsampling.
//!
//! Everything is stored as `f64` in row-major order.

use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero by [`cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-12;

/// Generic n-dimensional array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero-length axis in {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// A `C x H x W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidTensor(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        // Reuse the generic checks (length, finiteness).
        let t = Tensor::new(vec![channels, height, width], data)?;
        Ok(Self {
            channels,
            height,
            width,
            data: t.into_data(),
        })
    }

    /// Builds a map from per-pixel vectors given in row-major pixel order.
    pub fn from_pixels(height: usize, width: usize, pixels: &[Vec<f64>]) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixel vectors for a {height}x{width} grid",
                pixels.len()
            )));
        }
        let channels = pixels.first().map_or(0, Vec::len);
        let plane = height * width;
        let mut data = vec![0.0; channels * plane];
        for (p, v) in pixels.iter().enumerate() {
            if v.len() != channels {
                return Err(Error::LengthMismatch {
                    left: channels,
                    right: v.len(),
                });
            }
            for (c, &x) in v.iter().enumerate() {
                data[c * plane + p] = x;
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Channel vector at pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        let off = y * self.width + x;
        (0..self.channels).map(|c| self.data[c * plane + off]).collect()
    }

    /// All pixel vectors in row-major pixel order.
    pub fn pixels(&self) -> Vec<Vec<f64>> {
        let plane = self.height * self.width;
        (0..plane)
            .map(|p| (0..self.channels).map(|c| self.data[c * plane + p]).collect())
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }

    /// Accepts rank-3 `C x H x W` tensors, or rank-2 `H x W` as a single channel.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.dims() {
            [c, h, w] => Self::new(c, h, w, t.into_data()),
            [h, w] => Self::new(1, h, w, t.into_data()),
            _ => Err(Error::ShapeMismatch(format!(
                "feature map needs rank 2 or 3, got dims {:?}",
                t.dims()
            ))),
        }
    }
}

/// An `H x W` grid of weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidTensor("mask dims must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTensor(format!(
                "mask value {} at flat index {pos} outside [0, 1]",
                data[pos]
            )));
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height, self.width],
            data: self.data.clone(),
        }
    }

    /// Accepts rank-2 `H x W` or rank-3 `1 x H x W` tensors.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.dims() {
            [h, w] | [1, h, w] => Self::new(h, w, t.into_data()),
            _ => Err(Error::ShapeMismatch(format!(
                "mask needs rank 2 (or 1xHxW), got dims {:?}",
                t.dims()
            ))),
        }
    }
}

fn pooled_extent(size: usize, window: usize, stride: usize) -> usize {
    (size - window) / stride + 1
}

/// Channel-wise average pooling. Trailing rows/columns that do not fill a
/// whole window are dropped.
pub fn avg_pool(map: &FeatureMap, window: (usize, usize), stride: (usize, usize)) -> Result<FeatureMap> {
    let (wh, ww) = window;
    let (sh, sw) = stride;
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return Err(Error::InvalidParameter(format!(
            "pooling window {window:?} and stride {stride:?} must be positive"
        )));
    }
    let (h, w) = map.spatial();
    if wh > h || ww > w {
        return Err(Error::WindowTooLarge { window, extent: (h, w) });
    }
    let oh = pooled_extent(h, wh, sh);
    let ow = pooled_extent(w, ww, sw);
    let area = (wh * ww) as f64;
    let mut out = Vec::with_capacity(map.channels() * oh * ow);
    for c in 0..map.channels() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * sh..oy * sh + wh {
                    for x in ox * sw..ox * sw + ww {
                        acc += map.get(c, y, x);
                    }
                }
                out.push(acc / area);
            }
        }
    }
    FeatureMap::new(map.channels(), oh, ow, out)
}

/// Cosine of the angle between `u` and `v`; `0` when either norm is below
/// [`COSINE_EPS`].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(cosine_unchecked(u, v))
}

#[inline]
pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < COSINE_EPS || nv < COSINE_EPS {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Overlap of source cell `i` with output cell `o` when `src` cells are
/// mapped onto `dst` output cells, in units of source cells.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in a common integer grid of src * dst sub-cells to keep the
    // boundaries exact.
    (0..dst)
        .map(|o| {
            let lo = o * src;
            let hi = (o + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|i| {
                    let a = lo.max(i * dst);
                    let b = hi.min((i + 1) * dst);
                    (b > a).then(|| (i, (b - a) as f64 / dst as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-average downsampling: each output cell is the mean of the source
/// region it covers, with fractional weights for partially covered cells.
pub fn downsample_mask(mask: &SoftMask, target: (usize, usize)) -> Result<SoftMask> {
    let (th, tw) = target;
    let (h, w) = mask.dims();
    if th == 0 || tw == 0 {
        return Err(Error::InvalidParameter("target dims must be positive".into()));
    }
    if th > h || tw > w {
        return Err(Error::UpsampleRequested {
            source_dims: (h, w),
            target,
        });
    }
    if target == (h, w) {
        return Ok(mask.clone());
    }
    let rows = overlap_weights(h, th);
    let cols = overlap_weights(w, tw);
    let cell_area = (h as f64 / th as f64) * (w as f64 / tw as f64);
    let mut out = Vec::with_capacity(th * tw);
    for row in &rows {
        for col in &cols {
            let mut acc = 0.0;
            for &(y, wy) in row {
                for &(x, wx) in col {
                    acc += wy * wx * mask.get(y, x);
                }
            }
            out.push((acc / cell_area).clamp(0.0, 1.0));
        }
    }
    SoftMask::new(th, tw, out)
}
