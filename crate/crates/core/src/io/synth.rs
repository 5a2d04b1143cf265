//! Synthetic two-class episodes with a known answer.
//!
//! Every pixel feature is its class mean plus i.i.d. Gaussian noise with
//! standard deviation `noise` per coordinate. The foreground region is a
//! rectangle or disk shared by the support, auxiliary and query maps; each
//! map draws its own noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{ConfigOverrides, EpisodeManifest};
use super::tensor_file::save_tensor;
use crate::episode::{Episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, SoftMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// Pixels with `top <= y < top + height` and `left <= x < left + width`.
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Pixels whose centre lies within `radius` of `center` (row, column).
    Disk { center: [f64; 2], radius: f64 },
}

impl Geometry {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Geometry::Rect {
                top,
                left,
                height,
                width,
            } => y >= top && y < top + height && x >= left && x < left + width,
            Geometry::Disk { center, radius } => {
                let dy = y as f64 + 0.5 - center[0];
                let dx = x as f64 + 0.5 - center[1];
                dy * dy + dx * dx <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub fg_mean: Vec<f64>,
    pub bg_mean: Vec<f64>,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    pub geometry: Geometry,
    /// Number of auxiliary maps.
    #[serde(default = "default_auxiliary")]
    pub auxiliary: usize,
    pub seed: u64,
}

fn default_auxiliary() -> usize {
    2
}

impl SynthSpec {
    /// Foreground mean `+a u`, background `-a u` along the unit diagonal `u`,
    /// with `|fg - bg| = separation * noise`, and a square foreground of
    /// side `height / 2` offset from the centre.
    pub fn two_blob(channels: usize, height: usize, width: usize, separation: f64, noise: f64, seed: u64) -> Self {
        let a = separation * noise / 2.0 / (channels as f64).sqrt();
        Self {
            channels,
            height,
            width,
            fg_mean: vec![a; channels],
            bg_mean: vec![-a; channels],
            noise,
            geometry: Geometry::Rect {
                top: height / 4 + 1,
                left: width / 4 - 1,
                height: height / 2,
                width: width / 2,
            },
            auxiliary: default_auxiliary(),
            seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            let key = message.split('`').nth(1).unwrap_or("<document>").to_string();
            Error::Manifest { key, message }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Error::Manifest {
            key: key.into(),
            message,
        };
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(bad("channels", "dims must be positive".into()));
        }
        if self.fg_mean.len() != self.channels {
            return Err(bad(
                "fg_mean",
                format!("length {} != channels {}", self.fg_mean.len(), self.channels),
            ));
        }
        if self.bg_mean.len() != self.channels {
            return Err(bad(
                "bg_mean",
                format!("length {} != channels {}", self.bg_mean.len(), self.channels),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(bad("noise", format!("{} must be finite and >= 0", self.noise)));
        }
        if self.fg_mean.iter().chain(&self.bg_mean).any(|v| !v.is_finite()) {
            return Err(bad("fg_mean", "means must be finite".into()));
        }
        Ok(())
    }

    pub fn mask(&self) -> SoftMask {
        let data = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .map(|(y, x)| if self.geometry.contains(y, x) { 1.0 } else { 0.0 })
            .collect();
        SoftMask::new(self.height, self.width, data).expect("0/1 mask")
    }
}

/// Generated maps plus the mask that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpisode {
    pub episode: Episode,
    pub truth: SoftMask,
}

fn draw_map(spec: &SynthSpec, mask: &SoftMask, rng: &mut ChaCha8Rng) -> FeatureMap {
    let plane = spec.height * spec.width;
    let mut data = vec![0.0; spec.channels * plane];
    for p in 0..plane {
        let mean = if mask.data()[p] == 1.0 {
            &spec.fg_mean
        } else {
            &spec.bg_mean
        };
        for (c, &mu) in mean.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            data[c * plane + p] = mu + spec.noise * z;
        }
    }
    FeatureMap::new(spec.channels, spec.height, spec.width, data).expect("finite synthetic data")
}

/// Draws support, auxiliary (in order) and query maps from one seeded stream.
pub fn synth_episode(spec: &SynthSpec) -> Result<SynthEpisode> {
    spec.validate()?;
    let truth = spec.mask();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let support = draw_map(spec, &truth, &mut rng);
    let auxiliary = (0..spec.auxiliary).map(|_| draw_map(spec, &truth, &mut rng)).collect();
    let query = draw_map(spec, &truth, &mut rng);
    Ok(SynthEpisode {
        episode: Episode {
            support,
            support_mask: truth.clone(),
            auxiliary,
            query,
            query_mask: Some(truth.clone()),
            config: EpisodeConfig::default(),
        },
        truth,
    })
}

/// Writes a synthetic episode and its manifest into `dir`. Returns the
/// manifest path.
pub fn write_synth_episode(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let synth = synth_episode(spec)?;
    let ep = &synth.episode;
    save_tensor(dir.join("support.t"), &ep.support.to_tensor())?;
    save_tensor(dir.join("support_mask.t"), &ep.support_mask.to_tensor())?;
    let mut aux_names = Vec::new();
    for (i, m) in ep.auxiliary.iter().enumerate() {
        let name = PathBuf::from(format!("aux_{i}.t"));
        save_tensor(dir.join(&name), &m.to_tensor())?;
        aux_names.push(name);
    }
    save_tensor(dir.join("query.t"), &ep.query.to_tensor())?;
    save_tensor(dir.join("query_mask.t"), &synth.truth.to_tensor())?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, spec.to_json() + "\n").map_err(Error::io(&spec_path))?;

    let manifest = EpisodeManifest {
        support_features: "support.t".into(),
        support_mask: "support_mask.t".into(),
        auxiliary_features: aux_names,
        query_features: "query.t".into(),
        query_mask: Some("query_mask.t".into()),
        config: ConfigOverrides::default(),
    };
    let path = dir.join("episode.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_maps_equal_means() {
        let mut spec = SynthSpec::two_blob(4, 8, 8, 6.0, 1.0, 3);
        spec.noise = 0.0;
        let s = synth_episode(&spec).unwrap();
        let truth = s.truth.data();
        for map in std::iter::once(&s.episode.support)
            .chain(&s.episode.auxiliary)
            .chain(std::iter::once(&s.episode.query))
        {
            for (p, px) in map.pixels().iter().enumerate() {
                let mean = if truth[p] == 1.0 { &spec.fg_mean } else { &spec.bg_mean };
                assert_eq!(px, mean);
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let spec = SynthSpec::two_blob(3, 8, 8, 6.0, 0.7, 11);
        assert_eq!(synth_episode(&spec).unwrap(), synth_episode(&spec).unwrap());
        let other = SynthSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(
            synth_episode(&spec).unwrap().episode.query,
            synth_episode(&other).unwrap().episode.query
        );
    }

    #[test]
    fn two_blob_separation() {
        let spec = SynthSpec::two_blob(8, 16, 16, 6.0, 0.5, 0);
        let d: f64 = spec
            .fg_mean
            .iter()
            .zip(&spec.bg_mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((d - 3.0).abs() < 1e-12);
        assert_eq!(spec.mask().sum(), 64.0);
    }

    #[test]
    fn disk_geometry() {
        let g = Geometry::Disk {
            center: [2.0, 2.0],
            radius: 1.0,
        };
        assert!(g.contains(1, 1));
        assert!(g.contains(1, 2) && g.contains(2, 1) && g.contains(2, 2));
        assert!(!g.contains(0, 0));
        assert!(!g.contains(3, 3));
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::two_blob(3, 4, 4, 6.0, 1.0, 0);
        s.fg_mean.pop();
        assert!(matches!(s.validate(), Err(Error::Manifest { key, .. }) if key == "fg_mean"));
        let mut s = SynthSpec::two_blob(3, 4, 4, 6.0, 1.0, 0);
        s.noise = -1.0;
        assert!(matches!(s.validate(), Err(Error::Manifest { key, .. }) if key == "noise"));
    }

    #[test]
    fn spec_json_round_trip() {
        let s = SynthSpec::two_blob(2, 6, 6, 6.0, 1.0, 5);
        assert_eq!(SynthSpec::parse(&s.to_json()).unwrap(), s);
        let disk = r#"{"channels": 1, "height": 4, "width": 4, "fg_mean": [1.0], "bg_mean": [-1.0],
                       "noise": 0.1, "geometry": {"shape": "disk", "center": [2.0, 2.0], "radius": 1.5},
                       "seed": 1}"#;
        let s = SynthSpec::parse(disk).unwrap();
        assert_eq!(s.auxiliary, 2);
    }
}
