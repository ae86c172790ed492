//! Deterministic synthetic crowd video: heads drift on a textured
//! background, rendered as soft blobs, with full identity ground truth.

mod io;
mod render;
mod scene;

pub use io::{read_png, write_png, SyntheticSequence};
pub use scene::{attribute_suite, generate, IlluminationProfile, SceneConfig, CROWDED_THRESHOLD};
