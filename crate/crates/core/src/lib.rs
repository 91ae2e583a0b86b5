//! Picks photograph-quality highlight frames out of long first-person travel
//! videos.
//!
//! The pipeline drops footage shot at unimportant places (from the GPS
//! track), splits the remaining frames into shots, scores each frame for
//! composition, mirror symmetry, color vibrancy and camera tilt, and then
//! builds a ranked album with at most a few frames per shot.

pub mod aesthetics;
pub mod color;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geo;
pub mod head_tilt;
pub mod ingest;
pub mod pipeline;
pub mod ranking;
pub mod segmentation;
pub mod shots;
mod util;

pub use aesthetics::{ColorBinTable, FrameScores};
pub use error::{Error, Result};
pub use ingest::FrameRecord;
pub use pipeline::{run_pipeline, PipelineConfig};
pub use ranking::HighlightAlbum;

pub use util::{file_sha256, json_hash, sha256_hex};
