//! Dataset preparation and evaluation metrics for generated SAR amplitude
//! imagery.
//!
//! The crate covers three metric families used to compare generated scenes
//! against real ones:
//!
//! * amplitude statistics: saturation-aware histograms and KL divergence
//!   ([`amp_stats`]),
//! * texture: gray-level co-occurrence matrices and Haralick descriptors over
//!   homogeneous patches ([`texture`]),
//! * prompt alignment: cosine similarity and batch rank statistics over
//!   image/caption embeddings ([`alignment`]),
//!
//! plus the preprocessing that produces the normalized amplitudes
//! ([`preprocess`]), numerical checks of the diffusion training objective
//! ([`diffusion`]) and checkpoint analytics ([`checkpoint`]). [`report`]
//! ties everything into one deterministic evaluation run.

pub mod alignment;
pub mod amp_stats;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod labels;
pub mod manifest;
pub mod preprocess;
pub mod raster;
pub mod report;
pub mod texture;

pub use error::{Error, ErrorKind, Result};
pub use labels::{CategoryLabel, KeywordDictionary, LabelSet};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use raster::{read_raster, write_raster, AmplitudeImage, SceneMask};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
