//! Grasp pose prediction driven by a multimodal vision-language oracle.
//!
//! The pipeline overlays coarse-to-fine grids on an image, asks an oracle
//! (a vision-language model, or a scripted stand-in) which grid cell is the
//! best grasping area, and aggregates the chosen cells into a candidate set.
//! The grasp point is the centroid of the candidate centers; the grasp angle
//! is the principal axis of their spread. Optional stages refine the result:
//! early stopping with a cropped re-query when the candidates agree, a
//! rotated re-query when the candidates line up away from the grid axes, and
//! a depth-based relocation onto the nearest graspable surface.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`geometry`] — points, pixel rectangles, principal axes, angles
//! - [`tiling`] — grid construction, overlay rendering, frame transforms
//! - [`oracle`] — prompts, response parsing, backends, transcripts
//! - [`pipeline`] — the candidate loop and pose estimation
//! - [`depth_refine`] — depth-disc search for the closest valid surface
//! - [`eval`] — metrics against human grasp annotations
//! - [`io`] — image/manifest/transcript serialization
//! - [`cli`] — the `oracle-grasp` command-line interface

pub mod cli;
pub mod config;
pub mod depth_refine;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod synth;
pub mod tiling;

pub use config::AppConfig;
pub use geometry::Point;
pub use oracle::{Oracle, OracleTranscript};
pub use pipeline::{predict_grasp, GraspPose, GraspResult, PipelineConfig};
