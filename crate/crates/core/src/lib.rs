//! Tracking the shape and radiance of an object through an image sequence.
//!
//! A template (a region plus the radiance defined on it) is matched to the
//! next frame by gradient descent on warps of the region under a
//! Sobolev-type metric. The gradient splits into a translation and a
//! mean-zero deformation obtained from a Neumann Poisson problem, which makes
//! the descent move coarse motions first and fine deformations later without
//! any scale schedule. Self-occlusions are estimated jointly with the warp;
//! dis-occlusions are detected from local appearance self-similarity; the
//! radiance is filtered recursively across frames.
//!
//! Module map:
//!
//! * [`field`], [`distance`], [`smooth`]: pixel-grid fields, fast marching,
//!   masked smoothing and interpolation.
//! * [`sobolev`]: the region-based Sobolev inner product and gradient.
//! * [`descent`]: level-set / backward-map transport and the coarse-to-fine
//!   warp descent, plus the Horn–Schunck comparison baseline.
//! * [`occlusion`], [`disocclusion`]: the two occlusion stages.
//! * [`tracker`]: per-frame recursion.
//! * [`eval`], [`synth`], [`viz`]: evaluation, synthetic sequences and
//!   visualisation used by the CLI and the test suites.

pub mod descent;
pub mod disocclusion;
pub mod distance;
pub mod error;
pub mod eval;
pub mod field;
pub mod occlusion;
pub mod smooth;
pub mod sobolev;
pub mod synth;
pub mod tracker;
pub mod viz;

pub use error::{Error, Result};
pub use field::{BackwardWarp, Grid2D, RegionMask, ScalarField, VectorField};
