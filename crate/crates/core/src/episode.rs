//! One support/auxiliary/query task run end to end.
//!
//! Stages, in order:
//!
//! 1. local prototypes of the support map, labeled by window occupancy;
//! 2. local prototypes of each auxiliary map (unlabeled);
//! 3. query pixels as unlabeled vertices;
//! 4. kNN graph over support, auxiliary, then query vertices;
//! 5. Poisson propagation and the query confidence map;
//! 6. masked-average global prototype, similarity map, fusion, calibration;
//! 7. thresholded masks at feature resolution.
//!
//! Every intermediate is kept in [`EpisodeResult`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::graph::{build_weight_graph_with, Symmetrization, VertexSet, WeightedGraph, DEFAULT_K};
use crate::metrics::{dsc, BinaryMask};
use crate::poisson::{
    build_source, extract_confidence_map, poisson_solve_iterative, ConfidenceMap, IterationOptions, PropagationResult,
    SolverWarning, DEFAULT_MAX_ITERATIONS, DEFAULT_TOL,
};
use crate::prototype::{
    assign_prototype_labels, local_prototype_pool, masked_average_pool, LocalPrototype, PrototypeLabel,
    PrototypeVector, DEFAULT_LABEL_THRESHOLD,
};
use crate::scc::{
    fuse_confidence, similarity_map, spatial_consistency_calibrate, Affine, CalibratedMap, FusedMap, Mlp, SimilarityMap,
};
use crate::tensor::{avg_pool, downsample_mask, FeatureMap, SoftMask};

/// Foreground/background.
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Threshold the confidence map directly.
    PoissonOnly,
    /// Threshold the peak-normalized channel mean of the calibrated map.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizationMode {
    #[default]
    Mean,
    Max,
}

impl From<SymmetrizationMode> for Symmetrization {
    fn from(m: SymmetrizationMode) -> Self {
        match m {
            SymmetrizationMode::Mean => Symmetrization::Mean,
            SymmetrizationMode::Max => Symmetrization::Max,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub window: (usize, usize),
    pub k_neighbors: usize,
    pub tol: f64,
    pub max_iterations: usize,
    pub label_threshold: f64,
    pub prediction_threshold: f64,
    pub prediction_mode: PredictionMode,
    pub symmetrization: SymmetrizationMode,
    /// 1x1 convolution over `[query pixel, prototype]`; cosine channel if absent.
    pub similarity: Option<Affine>,
    /// Transformation inside calibration; identity if absent.
    pub h: Option<Mlp>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            window: (4, 4),
            k_neighbors: DEFAULT_K,
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            label_threshold: DEFAULT_LABEL_THRESHOLD,
            prediction_threshold: 0.5,
            prediction_mode: PredictionMode::default(),
            symmetrization: SymmetrizationMode::default(),
            similarity: None,
            h: None,
        }
    }
}

impl EpisodeConfig {
    pub fn iteration_options(&self) -> IterationOptions {
        IterationOptions {
            tol: self.tol,
            max_iterations: self.max_iterations,
        }
    }
}

/// 1-way 1-shot task.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: FeatureMap,
    /// Support mask at feature resolution or finer.
    pub support_mask: SoftMask,
    pub auxiliary: Vec<FeatureMap>,
    pub query: FeatureMap,
    /// Ground truth for scoring, at feature resolution or finer.
    pub query_mask: Option<SoftMask>,
    pub config: EpisodeConfig,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        let c = self.support.channels();
        let hw = self.support.spatial();
        for (name, map) in
            std::iter::once(("query", &self.query)).chain(self.auxiliary.iter().map(|m| ("auxiliary", m)))
        {
            if map.channels() != c || map.spatial() != hw {
                return Err(Error::ShapeMismatch(format!(
                    "{name} map is {}x{}x{}, support is {c}x{}x{}",
                    map.channels(),
                    map.height(),
                    map.width(),
                    hw.0,
                    hw.1
                )));
            }
        }
        let (mh, mw) = self.support_mask.dims();
        if mh < hw.0 || mw < hw.1 {
            return Err(Error::ShapeMismatch(format!(
                "support mask {mh}x{mw} is coarser than the feature map {}x{}",
                hw.0, hw.1
            )));
        }
        let cfg = &self.config;
        if !(cfg.prediction_threshold > 0.0 && cfg.prediction_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prediction threshold {} not in (0, 1)",
                cfg.prediction_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeWarning {
    Solver(SolverWarning),
    /// No support prototype carries this class.
    MissingClass(PrototypeLabel),
}

impl std::fmt::Display for EpisodeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpisodeWarning::Solver(w) => w.fmt(f),
            EpisodeWarning::MissingClass(l) => write!(f, "no support prototype labeled {l:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub support_prototypes: Vec<LocalPrototype>,
    pub auxiliary_prototypes: Vec<LocalPrototype>,
    pub vertices: VertexSet,
    pub graph: WeightedGraph,
    pub propagation: PropagationResult,
    pub confidence: ConfidenceMap,
    pub global_prototype: PrototypeVector,
    pub similarity: SimilarityMap,
    pub fused: FusedMap,
    pub calibrated: CalibratedMap,
    pub poisson_mask: BinaryMask,
    pub calibrated_mask: BinaryMask,
    /// Copy of the mask selected by the configured prediction mode.
    pub predicted: BinaryMask,
    pub dsc_poisson: Option<f64>,
    pub dsc_calibrated: Option<f64>,
    pub warnings: Vec<EpisodeWarning>,
}

impl EpisodeResult {
    /// DSC of the configured prediction, when ground truth was given.
    pub fn dsc(&self, mode: PredictionMode) -> Option<f64> {
        match mode {
            PredictionMode::PoissonOnly => self.dsc_poisson,
            PredictionMode::Calibrated => self.dsc_calibrated,
        }
    }
}

/// Brings a mask to `target` by area averaging (no-op when equal).
pub fn mask_at(mask: &SoftMask, target: (usize, usize)) -> Result<SoftMask> {
    downsample_mask(mask, target)
}

/// Labeled support prototypes. `mask` must be at feature resolution; its
/// per-window occupancy uses the same tiling as the prototypes.
pub fn support_prototypes(
    support: &FeatureMap,
    mask: &SoftMask,
    window: (usize, usize),
    tau: f64,
) -> Result<Vec<LocalPrototype>> {
    let protos = local_prototype_pool(support, window).map_err(Error::at(Stage::SupportPooling))?;
    let occupancy = {
        let m = FeatureMap::new(1, mask.height(), mask.width(), mask.data().to_vec())
            .and_then(|m| avg_pool(&m, window, window))
            .map_err(Error::at(Stage::SupportLabels))?;
        SoftMask::new(
            m.height(),
            m.width(),
            m.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .map_err(Error::at(Stage::SupportLabels))?
    };
    assign_prototype_labels(&protos, &occupancy, tau).map_err(Error::at(Stage::SupportLabels))
}

pub fn auxiliary_prototypes(maps: &[FeatureMap], window: (usize, usize)) -> Result<Vec<LocalPrototype>> {
    let mut out = Vec::new();
    for m in maps {
        out.extend(local_prototype_pool(m, window).map_err(Error::at(Stage::AuxiliaryPooling))?);
    }
    Ok(out)
}

pub fn assemble_vertices(
    support: &[LocalPrototype],
    auxiliary: &[LocalPrototype],
    query: &FeatureMap,
) -> Result<VertexSet> {
    let labels = support
        .iter()
        .map(|p| {
            p.label
                .class_index()
                .ok_or_else(|| Error::InvalidLabel("unlabeled support prototype".into()))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at(Stage::SupportLabels))?;
    VertexSet::new(
        support.iter().map(|p| p.vector.clone()).collect(),
        labels,
        auxiliary.iter().map(|p| p.vector.clone()).collect(),
        query.pixels(),
        CLASSES,
    )
    .map_err(Error::at(Stage::GraphConstruction))
}

/// Per-pixel channel mean of the calibrated map divided by its largest
/// magnitude over the image (all zeros stay zero).
pub fn calibrated_scores(calibrated: &CalibratedMap) -> Vec<f64> {
    let map = &calibrated.0;
    let means: Vec<f64> = map
        .pixels()
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let peak = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return means;
    }
    means.into_iter().map(|v| v / peak).collect()
}

/// Threshold rule standing in for a learned decoder. Foreground iff the
/// mode's score is `>= threshold`.
pub fn predict_mask(
    confidence: &ConfidenceMap,
    calibrated: &CalibratedMap,
    threshold: f64,
    mode: PredictionMode,
) -> Result<BinaryMask> {
    let (h, w) = confidence.dims();
    match mode {
        PredictionMode::PoissonOnly => BinaryMask::threshold(h, w, confidence.data(), threshold),
        PredictionMode::Calibrated => {
            let map = &calibrated.0;
            BinaryMask::threshold(map.height(), map.width(), &calibrated_scores(calibrated), threshold)
        }
    }
}

fn score(pred: &BinaryMask, truth: Option<&BinaryMask>) -> Result<Option<f64>> {
    truth
        .map(|t| dsc(pred, t))
        .transpose()
        .map_err(Error::at(Stage::Scoring))
}

/// Ground truth binarized at feature resolution (`>= 0.5` after area averaging).
pub fn ground_truth_at(mask: &SoftMask, target: (usize, usize)) -> Result<BinaryMask> {
    let m = mask_at(mask, target).map_err(Error::at(Stage::Scoring))?;
    BinaryMask::threshold(m.height(), m.width(), m.data(), 0.5)
}

pub fn run_episode(ep: &Episode) -> Result<EpisodeResult> {
    ep.validate()?;
    let cfg = &ep.config;
    let (h, w) = ep.query.spatial();

    let support_mask = mask_at(&ep.support_mask, (h, w)).map_err(Error::at(Stage::SupportLabels))?;
    let support = support_prototypes(&ep.support, &support_mask, cfg.window, cfg.label_threshold)?;
    let auxiliary = auxiliary_prototypes(&ep.auxiliary, cfg.window)?;
    let vertices = assemble_vertices(&support, &auxiliary, &ep.query)?;

    let mut warnings = Vec::new();
    for label in [PrototypeLabel::Background, PrototypeLabel::Foreground] {
        if !support.iter().any(|p| p.label == label) {
            warnings.push(EpisodeWarning::MissingClass(label));
        }
    }

    let graph = build_weight_graph_with(vertices.points(), cfg.k_neighbors, cfg.symmetrization.into())
        .map_err(Error::at(Stage::GraphConstruction))?;
    let source = build_source(vertices.labels(), vertices.len(), CLASSES).map_err(Error::at(Stage::Propagation))?;
    let propagation =
        poisson_solve_iterative(&graph, &source, cfg.iteration_options()).map_err(Error::at(Stage::Propagation))?;
    warnings.extend(propagation.warnings.iter().copied().map(EpisodeWarning::Solver));
    let (_, _, n_q) = vertices.counts();
    let confidence = extract_confidence_map(&propagation, n_q, h, w).map_err(Error::at(Stage::ConfidenceMap))?;

    let global_prototype =
        masked_average_pool(&ep.support, &support_mask).map_err(Error::at(Stage::GlobalPrototype))?;
    let similarity =
        similarity_map(&ep.query, &global_prototype, cfg.similarity.as_ref()).map_err(Error::at(Stage::Similarity))?;
    let fused = fuse_confidence(&similarity, &confidence).map_err(Error::at(Stage::Fusion))?;
    let calibrated = spatial_consistency_calibrate(&fused, cfg.h.as_ref()).map_err(Error::at(Stage::Calibration))?;

    let theta = cfg.prediction_threshold;
    let poisson_mask = predict_mask(&confidence, &calibrated, theta, PredictionMode::PoissonOnly)?;
    let calibrated_mask = predict_mask(&confidence, &calibrated, theta, PredictionMode::Calibrated)?;
    let predicted = match cfg.prediction_mode {
        PredictionMode::PoissonOnly => poisson_mask.clone(),
        PredictionMode::Calibrated => calibrated_mask.clone(),
    };

    let truth = ep.query_mask.as_ref().map(|m| ground_truth_at(m, (h, w))).transpose()?;
    let dsc_poisson = score(&poisson_mask, truth.as_ref())?;
    let dsc_calibrated = score(&calibrated_mask, truth.as_ref())?;

    Ok(EpisodeResult {
        support_prototypes: support,
        auxiliary_prototypes: auxiliary,
        vertices,
        graph,
        propagation,
        confidence,
        global_prototype,
        similarity,
        fused,
        calibrated,
        poisson_mask,
        calibrated_mask,
        predicted,
        dsc_poisson,
        dsc_calibrated,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_threshold_rules() {
        let cal = CalibratedMap(FeatureMap::filled(1, 2, 2, 0.0).unwrap());
        let half = ConfidenceMap::filled(2, 2, 0.5).unwrap();
        let m = predict_mask(&half, &cal, 0.5, PredictionMode::PoissonOnly).unwrap();
        assert_eq!(m.count(), 4);
        let zero = ConfidenceMap::filled(2, 2, 0.0).unwrap();
        assert_eq!(
            predict_mask(&zero, &cal, 0.5, PredictionMode::PoissonOnly)
                .unwrap()
                .count(),
            0
        );
        assert_eq!(
            predict_mask(&zero, &cal, 0.5, PredictionMode::Calibrated)
                .unwrap()
                .count(),
            0
        );
    }

    #[test]
    fn calibrated_scores_are_peak_normalized() {
        let cal =
            CalibratedMap(FeatureMap::from_pixels(1, 3, &[vec![0.2, 0.4], vec![-0.6, 0.0], vec![0.1, 0.1]]).unwrap());
        let s = calibrated_scores(&cal);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!((s[1] + 1.0).abs() < 1e-15);
        assert!((s[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn raising_threshold_never_adds_foreground() {
        let data: Vec<f64> = (0..30).map(|i| ((i * 17) % 30) as f64 / 30.0).collect();
        let conf = ConfidenceMap::new(5, 6, data.clone()).unwrap();
        let cal = CalibratedMap(FeatureMap::new(1, 5, 6, data.iter().map(|v| v - 0.4).collect()).unwrap());
        for mode in [PredictionMode::PoissonOnly, PredictionMode::Calibrated] {
            let mut prev: Option<BinaryMask> = None;
            for t in [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95] {
                let m = predict_mask(&conf, &cal, t, mode).unwrap();
                if let Some(p) = &prev {
                    assert!(m.data().iter().zip(p.data()).all(|(now, before)| !*now || *before));
                }
                prev = Some(m);
            }
        }
    }

    #[test]
    fn support_labels_follow_window_occupancy() {
        let map = FeatureMap::filled(2, 4, 4, 1.0).unwrap();
        let mut m = vec![0.0; 16];
        // top-left window fully set, top-right half set
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2)] {
            m[y * 4 + x] = 1.0;
        }
        let mask = SoftMask::new(4, 4, m).unwrap();
        let p = support_prototypes(&map, &mask, (2, 2), 0.5).unwrap();
        let labels: Vec<_> = p.iter().map(|p| p.label).collect();
        use PrototypeLabel::*;
        assert_eq!(labels, vec![Foreground, Foreground, Background, Background]);
    }

    #[test]
    fn shape_validation() {
        let f = FeatureMap::filled(2, 4, 4, 1.0).unwrap();
        let ep = Episode {
            support: f.clone(),
            support_mask: SoftMask::filled(4, 4, 1.0).unwrap(),
            auxiliary: vec![FeatureMap::filled(3, 4, 4, 1.0).unwrap()],
            query: f,
            query_mask: None,
            config: EpisodeConfig::default(),
        };
        assert!(matches!(run_episode(&ep), Err(Error::ShapeMismatch(_))));
    }
}
