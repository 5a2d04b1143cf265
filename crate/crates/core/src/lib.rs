//! Poisson-learning label propagation for few-shot segmentation.
//!
//! The crate works on precomputed feature maps. A support map with its mask,
//! optional auxiliary maps and a query map are turned into graph vertices
//! (pooled local prototypes plus query pixels), labels are propagated by
//! solving a graph Poisson equation, and the resulting confidence map is
//! fused with prototype similarity and smoothed by spatial consistency
//! calibration.
//!
//! ```no_run
//! use poissonprop::io::{synth_episode, SynthSpec};
//! use poissonprop::episode::run_episode;
//!
//! let synth = synth_episode(&SynthSpec::two_blob(8, 16, 16, 6.0, 1.0, 0)).unwrap();
//! let result = run_episode(&synth.episode).unwrap();
//! println!("DSC {:?}", result.dsc_calibrated);
//! ```

pub mod cli;
pub mod episode;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod poisson;
pub mod prototype;
pub mod scc;
pub mod tensor;

pub use episode::{run_episode, Episode, EpisodeConfig, EpisodeResult, PredictionMode};
pub use error::{Error, Result};
pub use graph::{build_weight_graph, laplacian_apply, VertexSet, WeightedGraph};
pub use poisson::{
    build_source, extract_confidence_map, poisson_solve_direct, poisson_solve_iterative, ConfidenceMap,
    IterationOptions, LabelSource, PropagationResult,
};
pub use tensor::{FeatureMap, SoftMask, Tensor};
