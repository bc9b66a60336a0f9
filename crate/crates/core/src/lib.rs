//! Online viewing-angle agent for 360° sports video.
//!
//! The agent observes a fixed number of candidate objects per frame, picks a
//! main object with a recurrent selector network, and refines the naive
//! "follow the object" steering action with a small recurrent regressor.
//! The crate also ships the training loop (policy gradient for the selector,
//! smoothness-regularized regression for the regressor), a seeded synthetic
//! scene generator standing in for a detector/tracker, the MO/MVD metrics and
//! a set of baseline pilots.
//!
//! Module map:
//!
//! - [`geometry`]: viewing angles, steering actions, NFoV rectangles.
//! - [`observation`]: per-frame object observations, scene synthesis, episode files.
//! - [`diffcore`]: parameter tensors, tanh RNN cell, BPTT, gradient checking, SGD.
//! - [`selector`] / [`regressor`]: the two networks.
//! - [`agent`]: the composed online pilot.
//! - [`training`]: reward, joint training step, epochs and checkpoints.
//! - [`eval`]: metrics, baselines, benchmark tables, sensitivity sweep.
//! - [`config`]: the declarative run configuration used by the CLI.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod observation;
pub mod regressor;
pub mod selector;
pub mod training;

pub use error::{PilotError, Result};
pub use geometry::{Action, NFoV, ViewingAngle};
pub use model::{Architecture, PilotModel};
pub use observation::{Episode, FrameObservation, ObjectObservation};
