//! Scene-similarity transferability metrics for map-free navigation policies.
//!
//! The crate bundles the pieces needed to compute and validate the metrics:
//!
//! - [`grid`], [`scene`], [`pgm`]: rasters, obstacle scenes and file I/O.
//! - [`matching`]: rotation-aware normalized cross-correlation.
//! - [`similarity`]: global and visitation-weighted local scene similarity.
//! - [`sim`]: a deterministic 2D differential-drive simulator with LiDAR.
//! - [`observation`]: egocentric local-map observations.
//! - [`drl`]: a small convolutional DQN trained from scratch.
//! - [`harness`]: evaluation, sensor sweeps, scene families and correlation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod matching;
pub mod pgm;
pub mod scene;
pub mod sim;
pub mod observation;
pub mod similarity;
pub mod drl;
pub mod harness;

pub use error::{Error, Result};
pub use grid::GridImage;
pub use matching::MatchResult;
pub use scene::{Obstacle, SceneSpec};
