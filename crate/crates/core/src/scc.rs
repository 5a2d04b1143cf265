//! Similarity maps, confidence fusion and spatial consistency calibration.
//!
//! Calibration replaces every pixel vector `v_i` of the fused map with
//!
//! ```text
//! v~_i = 1/(HW) * sum_j ReLU(cos(v_i, v_j)) * h(v_j)
//! ```
//!
//! where the sum runs over all pixels (including `i`) and `h` is a two-layer
//! perceptron, identity by default.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::poisson::ConfidenceMap;
use crate::prototype::PrototypeVector;
use crate::tensor::{cosine_unchecked, FeatureMap, COSINE_EPS};

/// Per-pixel affine map `x -> W x + b` (a 1x1 convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    weight: Array2<f64>,
    bias: Vec<f64>,
}

impl Affine {
    /// `weight` is `out x in`.
    pub fn new(weight: Array2<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if weight.is_empty() {
            return Err(Error::ShapeMismatch("empty weight matrix".into()));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("non-finite affine parameter".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .outer_iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Two affine layers with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    first: Affine,
    second: Affine,
}

impl Mlp {
    pub fn new(first: Affine, second: Affine) -> Result<Self> {
        if first.output_dim() != second.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "hidden width {} vs second layer input {}",
                first.output_dim(),
                second.input_dim()
            )));
        }
        Ok(Self { first, second })
    }

    pub fn layers(&self) -> (&Affine, &Affine) {
        (&self.first, &self.second)
    }

    pub fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self.first.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        self.second.apply(&hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap(pub FeatureMap);

#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap(pub FeatureMap);

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedMap(pub FeatureMap);

/// Similarity between each query pixel and the global prototype.
///
/// Without parameters the map has one channel holding the cosine similarity.
/// With parameters, `params` is applied to the concatenation
/// `[query pixel, prototype]` and must therefore take `2C` inputs.
pub fn similarity_map(query: &FeatureMap, proto: &PrototypeVector, params: Option<&Affine>) -> Result<SimilarityMap> {
    let c = query.channels();
    if proto.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "prototype length {} vs query channels {c}",
            proto.len()
        )));
    }
    let pixels = query.pixels();
    let out: Vec<Vec<f64>> = match params {
        None => pixels
            .iter()
            .map(|px| vec![cosine_unchecked(px, proto.as_slice())])
            .collect(),
        Some(affine) => {
            if affine.input_dim() != 2 * c {
                return Err(Error::ShapeMismatch(format!(
                    "similarity weights take {} inputs, need {}",
                    affine.input_dim(),
                    2 * c
                )));
            }
            pixels
                .iter()
                .map(|px| {
                    let mut joined = px.clone();
                    joined.extend_from_slice(proto.as_slice());
                    affine.apply(&joined)
                })
                .collect()
        }
    };
    FeatureMap::from_pixels(query.height(), query.width(), &out).map(SimilarityMap)
}

/// Multiplies every channel of `sim` by the confidence map.
pub fn fuse_confidence(sim: &SimilarityMap, conf: &ConfidenceMap) -> Result<FusedMap> {
    let map = &sim.0;
    if map.spatial() != conf.dims() {
        return Err(Error::ShapeMismatch(format!(
            "similarity map {:?} vs confidence map {:?}",
            map.spatial(),
            conf.dims()
        )));
    }
    let plane = map.height() * map.width();
    let data = map
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * conf.data()[idx % plane])
        .collect();
    FeatureMap::new(map.channels(), map.height(), map.width(), data).map(FusedMap)
}

/// Similarity-weighted average of transformed pixel vectors.
pub fn spatial_consistency_calibrate(fused: &FusedMap, h: Option<&Mlp>) -> Result<CalibratedMap> {
    let map = &fused.0;
    if let Some(mlp) = h {
        if mlp.input_dim() != map.channels() {
            return Err(Error::ShapeMismatch(format!(
                "h takes {} inputs, fused map has {} channels",
                mlp.input_dim(),
                map.channels()
            )));
        }
    }
    let pixels = map.pixels();
    let hw = pixels.len();
    let transformed: Vec<Vec<f64>> = match h {
        Some(mlp) => pixels.iter().map(|v| mlp.apply(v)).collect(),
        None => pixels.clone(),
    };
    let out_dim = transformed[0].len();
    let norms: Vec<f64> = pixels
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let out: Vec<Vec<f64>> = (0..hw)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; out_dim];
            if norms[i] < COSINE_EPS {
                return acc;
            }
            for j in 0..hw {
                if norms[j] < COSINE_EPS {
                    continue;
                }
                let dot: f64 = pixels[i].iter().zip(&pixels[j]).map(|(a, b)| a * b).sum();
                let weight = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                if weight <= 0.0 {
                    continue;
                }
                for (a, t) in acc.iter_mut().zip(&transformed[j]) {
                    *a += weight * t;
                }
            }
            let scale = 1.0 / hw as f64;
            acc.iter_mut().for_each(|a| *a *= scale);
            acc
        })
        .collect();
    FeatureMap::from_pixels(map.height(), map.width(), &out).map(CalibratedMap)
}

/// Reference O((HW)^2) calibration written directly from the formula, used
/// to cross-check the optimized path.
#[doc(hidden)]
pub fn calibrate_reference(fused: &FusedMap, h: Option<&Mlp>) -> Vec<Vec<f64>> {
    let pixels = fused.0.pixels();
    let hw = pixels.len() as f64;
    pixels
        .iter()
        .map(|vi| {
            let mut acc: Vec<f64> = Vec::new();
            for vj in &pixels {
                let s = cosine_unchecked(vi, vj).max(0.0);
                let t = h.map_or_else(|| vj.clone(), |m| m.apply(vj));
                if acc.is_empty() {
                    acc = vec![0.0; t.len()];
                }
                for (a, x) in acc.iter_mut().zip(t) {
                    *a += s * x;
                }
            }
            acc.into_iter().map(|a| a / hw).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn fused(h: usize, w: usize, pixels: &[Vec<f64>]) -> FusedMap {
        FusedMap(FeatureMap::from_pixels(h, w, pixels).unwrap())
    }

    #[test]
    fn default_similarity_examples() {
        let q = FeatureMap::from_pixels(1, 3, &[vec![1.0, 2.0], vec![-2.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let p = PrototypeVector(vec![1.0, 2.0]);
        let s = similarity_map(&q, &p, None).unwrap();
        assert_eq!(s.0.channels(), 1);
        assert!((s.0.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(s.0.data()[1], 0.0);
        assert_eq!(s.0.data()[2], 0.0);
        assert!(similarity_map(&q, &PrototypeVector(vec![1.0]), None).is_err());
    }

    #[test]
    fn affine_similarity_identity_on_query() {
        let q = FeatureMap::from_pixels(2, 1, &[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let p = PrototypeVector(vec![9.0, 9.0]);
        let w = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let a = Affine::new(w, vec![0.0, 0.0]).unwrap();
        let s = similarity_map(&q, &p, Some(&a)).unwrap();
        assert_eq!(s.0, q);
        let bad = Affine::identity(2);
        assert!(matches!(
            similarity_map(&q, &p, Some(&bad)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fusion_examples() {
        let map = FeatureMap::new(2, 1, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let sim = SimilarityMap(map.clone());
        let one = fuse_confidence(&sim, &ConfidenceMap::filled(1, 2, 1.0).unwrap()).unwrap();
        assert_eq!(one.0, map);
        let zero = fuse_confidence(&sim, &ConfidenceMap::filled(1, 2, 0.0).unwrap()).unwrap();
        assert!(zero.0.data().iter().all(|&v| v == 0.0));
        let half = fuse_confidence(&sim, &ConfidenceMap::filled(1, 2, 0.5).unwrap()).unwrap();
        assert_eq!(half.0.data(), &[0.5, -1.0, 1.5, 0.25]);
        let per_pixel = fuse_confidence(&sim, &ConfidenceMap::new(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(per_pixel.0.data(), &[1.0, 0.0, 3.0, 0.0]);
        assert!(fuse_confidence(&sim, &ConfidenceMap::filled(2, 1, 1.0).unwrap()).is_err());
    }

    #[test]
    fn constant_field_is_fixed() {
        let v = vec![0.3, -1.1, 2.0];
        let f = fused(3, 4, &vec![v.clone(); 12]);
        let out = spatial_consistency_calibrate(&f, None).unwrap();
        for px in out.0.pixels() {
            for (a, b) in px.iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_groups_halve() {
        let u = vec![1.0, 0.0];
        let w = vec![0.0, 1.0];
        let f = fused(2, 2, &[u.clone(), w.clone(), w.clone(), u.clone()]);
        let out = spatial_consistency_calibrate(&f, None).unwrap().0.pixels();
        assert_eq!(out[0], vec![0.5, 0.0]);
        assert_eq!(out[1], vec![0.0, 0.5]);
        assert_eq!(out[2], vec![0.0, 0.5]);
        assert_eq!(out[3], vec![0.5, 0.0]);
    }

    #[test]
    fn zero_h_annihilates() {
        let f = fused(1, 3, &[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0]]);
        let zero = Affine::new(Array2::zeros((2, 2)), vec![0.0; 2]).unwrap();
        let h = Mlp::new(zero.clone(), zero).unwrap();
        let out = spatial_consistency_calibrate(&f, Some(&h)).unwrap();
        assert!(out.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_rectifies_hidden_layer() {
        let first = Affine::new(array![[1.0], [-1.0]], vec![0.0, 0.0]).unwrap();
        let second = Affine::new(array![[1.0, 1.0]], vec![0.5]).unwrap();
        let h = Mlp::new(first, second).unwrap();
        assert_eq!(h.apply(&[2.0]), vec![2.5]);
        assert_eq!(h.apply(&[-3.0]), vec![3.5]);
        let bad = Affine::new(array![[1.0]], vec![0.0]).unwrap();
        assert!(Mlp::new(Affine::identity(2), bad).is_err());
    }

    #[test]
    fn antipodal_outlier_is_ignored() {
        let mut pixels = vec![vec![1.0, 0.2], vec![0.8, 0.5], vec![1.0, 1.0], vec![0.9, 0.1]];
        let base = spatial_consistency_calibrate(&fused(2, 2, &pixels), None)
            .unwrap()
            .0
            .pixels();
        // Replace by a 2x3 map with two outliers pointing away from everything.
        pixels.push(vec![-1.0, -1.0]);
        pixels.push(vec![-2.0, -0.7]);
        let with = spatial_consistency_calibrate(&fused(2, 3, &pixels), None)
            .unwrap()
            .0
            .pixels();
        for i in 0..4 {
            for c in 0..2 {
                // same sum, different 1/HW normalization
                assert!((with[i][c] * 6.0 - base[i][c] * 4.0).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn matches_reference_and_is_permutation_equivariant(
            data in prop::collection::vec(-2.0..2.0f64, 3 * 12),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let pixels: Vec<Vec<f64>> = data.chunks(3).map(|c| c.to_vec()).collect();
            let first = Affine::new(
                Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin()),
                vec![0.1, -0.2, 0.0, 0.3],
            ).unwrap();
            let second = Affine::new(
                Array2::from_shape_fn((2, 4), |(i, j)| ((i * 4 + j) as f64 * 0.53).cos()),
                vec![0.0, 0.05],
            ).unwrap();
            let h = Mlp::new(first, second).unwrap();
            let f = fused(3, 4, &pixels);
            let fast = spatial_consistency_calibrate(&f, Some(&h)).unwrap().0.pixels();
            let slow = calibrate_reference(&f, Some(&h));
            for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-12);
            }

            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| pixels[p].clone()).collect();
            let fp = spatial_consistency_calibrate(&fused(4, 3, &permuted), Some(&h)).unwrap().0.pixels();
            for (a, &p) in perm.iter().enumerate() {
                for (x, y) in fp[a].iter().zip(&fast[p]) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn default_similarity_in_range(
            q in prop::collection::vec(-3.0..3.0f64, 4 * 6),
            p in prop::collection::vec(-3.0..3.0f64, 4),
        ) {
            let map = FeatureMap::new(4, 2, 3, q).unwrap();
            let s = similarity_map(&map, &PrototypeVector(p), None).unwrap();
            prop_assert!(s.0.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn fusion_monotone_in_confidence(
            sim in prop::collection::vec(-3.0..3.0f64, 2 * 6),
            lo in prop::collection::vec(0.0..=1.0f64, 6),
            bump in prop::collection::vec(0.0..=1.0f64, 6),
        ) {
            let s = SimilarityMap(FeatureMap::new(2, 2, 3, sim).unwrap());
            let hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect();
            let a = fuse_confidence(&s, &ConfidenceMap::new(2, 3, lo).unwrap()).unwrap();
            let b = fuse_confidence(&s, &ConfidenceMap::new(2, 3, hi).unwrap()).unwrap();
            for ((x, y), z) in a.0.data().iter().zip(b.0.data()).zip(s.0.data()) {
                prop_assert!(x.abs() <= y.abs());
                prop_assert!(y.abs() <= z.abs());
            }
        }
    }
}
