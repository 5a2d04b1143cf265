//! Episode manifests: a JSON document naming the tensor files of one task
//! plus optional configuration overrides.
//!
//! ```json
//! {
//!   "support_features": "support.t",
//!   "support_mask": "support_mask.t",
//!   "auxiliary_features": ["aux_0.t", "aux_1.t"],
//!   "query_features": "query.t",
//!   "query_mask": "query_mask.t",
//!   "config": {
//!     "window": [4, 4],
//!     "k_neighbors": 10,
//!     "tol": 1e-6,
//!     "max_iterations": 1000,
//!     "label_threshold": 0.5,
//!     "prediction_threshold": 0.5,
//!     "prediction_mode": "calibrated",
//!     "symmetrization": "mean",
//!     "similarity_weight": "sim_w.t",
//!     "similarity_bias": "sim_b.t",
//!     "h_weight1": "h_w1.t", "h_bias1": "h_b1.t",
//!     "h_weight2": "h_w2.t", "h_bias2": "h_b2.t"
//!   }
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Only
//! `support_features`, `support_mask` and `query_features` are required.
//! Weight tensors are `out x in`, biases rank 1.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tensor_file::load_tensor;
use crate::episode::{Episode, EpisodeConfig, PredictionMode, SymmetrizationMode};
use crate::error::{Error, Result};
use crate::scc::{Affine, Mlp};
use crate::tensor::{FeatureMap, SoftMask, Tensor};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_neighbors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_mode: Option<PredictionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetrization: Option<SymmetrizationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_weight: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_bias: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_weight1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_bias1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_weight2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_bias2: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub support_features: PathBuf,
    pub support_mask: PathBuf,
    #[serde(default)]
    pub auxiliary_features: Vec<PathBuf>,
    pub query_features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_mask: Option<PathBuf>,
    #[serde(default)]
    pub config: ConfigOverrides,
}

/// Pulls the first backquoted name out of a serde message, which is how
/// serde reports unknown and missing fields.
fn offending_key(message: &str) -> String {
    let mut parts = message.split('`');
    match (parts.next(), parts.next()) {
        (Some(_), Some(key)) => key.to_string(),
        _ => "<document>".to_string(),
    }
}

impl EpisodeManifest {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            Error::Manifest {
                key: offending_key(&message),
                message,
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(Error::io(path))
    }

    /// Config with overrides applied; parameter files resolved against `base`.
    pub fn config(&self, base: &Path) -> Result<EpisodeConfig> {
        let o = &self.config;
        let d = EpisodeConfig::default();
        let similarity = match (&o.similarity_weight, &o.similarity_bias) {
            (None, None) => None,
            (Some(w), Some(b)) => Some(load_affine(base, ("similarity_weight", w), ("similarity_bias", b))?),
            (Some(_), None) => return Err(missing_pair("similarity_bias")),
            (None, Some(_)) => return Err(missing_pair("similarity_weight")),
        };
        let h = match (&o.h_weight1, &o.h_bias1, &o.h_weight2, &o.h_bias2) {
            (None, None, None, None) => None,
            (Some(w1), Some(b1), Some(w2), Some(b2)) => {
                let first = load_affine(base, ("h_weight1", w1), ("h_bias1", b1))?;
                let second = load_affine(base, ("h_weight2", w2), ("h_bias2", b2))?;
                Some(Mlp::new(first, second).map_err(|e| Error::Manifest {
                    key: "h_weight2".into(),
                    message: e.to_string(),
                })?)
            }
            _ => {
                return Err(Error::Manifest {
                    key: "h_weight1".into(),
                    message: "h needs all of h_weight1, h_bias1, h_weight2, h_bias2".into(),
                })
            }
        };
        let window = o.window.map_or(d.window, |[a, b]| (a, b));
        Ok(EpisodeConfig {
            window,
            k_neighbors: o.k_neighbors.unwrap_or(d.k_neighbors),
            tol: o.tol.unwrap_or(d.tol),
            max_iterations: o.max_iterations.unwrap_or(d.max_iterations),
            label_threshold: o.label_threshold.unwrap_or(d.label_threshold),
            prediction_threshold: o.prediction_threshold.unwrap_or(d.prediction_threshold),
            prediction_mode: o.prediction_mode.unwrap_or(d.prediction_mode),
            symmetrization: o.symmetrization.unwrap_or(d.symmetrization),
            similarity,
            h,
        })
    }

    /// Loads every referenced file and checks shapes.
    pub fn to_episode(&self, base: &Path) -> Result<Episode> {
        let support = FeatureMap::from_tensor(read(base, "support_features", &self.support_features)?)?;
        let support_mask = SoftMask::from_tensor(read(base, "support_mask", &self.support_mask)?)?;
        let auxiliary = self
            .auxiliary_features
            .iter()
            .map(|p| FeatureMap::from_tensor(read(base, "auxiliary_features", p)?))
            .collect::<Result<Vec<_>>>()?;
        let query = FeatureMap::from_tensor(read(base, "query_features", &self.query_features)?)?;
        let query_mask = self
            .query_mask
            .as_ref()
            .map(|p| SoftMask::from_tensor(read(base, "query_mask", p)?))
            .transpose()?;
        let episode = Episode {
            support,
            support_mask,
            auxiliary,
            query,
            query_mask,
            config: self.config(base)?,
        };
        episode.validate()?;
        Ok(episode)
    }
}

/// Reads a manifest and the episode it describes.
pub fn load_episode(path: impl AsRef<Path>) -> Result<Episode> {
    let path = path.as_ref();
    let manifest = EpisodeManifest::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.to_episode(base)
}

fn missing_pair(key: &str) -> Error {
    Error::Manifest {
        key: key.into(),
        message: "weight and bias must be given together".into(),
    }
}

fn read(base: &Path, key: &str, rel: &Path) -> Result<Tensor> {
    let path = base.join(rel);
    if !path.is_file() {
        return Err(Error::Manifest {
            key: key.into(),
            message: format!("file {} does not exist", path.display()),
        });
    }
    load_tensor(&path)
}

fn load_affine(base: &Path, weight: (&str, &Path), bias: (&str, &Path)) -> Result<Affine> {
    let w = read(base, weight.0, weight.1)?;
    let b = read(base, bias.0, bias.1)?;
    let (rows, cols) = match *w.dims() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::Manifest {
                key: weight.0.into(),
                message: format!("weight must be rank 2, got dims {:?}", w.dims()),
            })
        }
    };
    if b.rank() != 1 {
        return Err(Error::Manifest {
            key: bias.0.into(),
            message: format!("bias must be rank 1, got dims {:?}", b.dims()),
        });
    }
    let weight_matrix = Array2::from_shape_vec((rows, cols), w.into_data()).expect("dims checked");
    Affine::new(weight_matrix, b.into_data()).map_err(|e| Error::Manifest {
        key: bias.0.into(),
        message: e.to_string(),
    })
}
