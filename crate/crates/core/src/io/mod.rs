//! File formats and the synthetic episode generator.

pub mod manifest;
pub mod synth;
pub mod tensor_file;

pub use manifest::{load_episode, ConfigOverrides, EpisodeManifest};
pub use synth::{synth_episode, write_synth_episode, Geometry, SynthEpisode, SynthSpec};
pub use tensor_file::{decode_tensor, encode_tensor, load_tensor, save_tensor, save_tensor_as, Dtype, MAGIC};
