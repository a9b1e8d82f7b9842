//! Multi-group equivariant augmentation for manipulation trajectories.
//!
//! Modules, bottom-up:
//! - [`group`]: trivial, translational and rotational representations, C4.
//! - [`trajectory`]: actions, point-cloud observations, episodes, replay buffer.
//! - [`sim`]: deterministic kinematic pick environment and replay oracle.
//! - [`phase`]: non-trivial / trivial / termination phase boundaries.
//! - [`mea`]: reverse-time augmentation, isometric overlay, condition checks.
//! - [`voxel`]: voxelization and orthographic min-z depth images.
//! - [`rl`]: linear Q-learning over depth features and evaluation metrics.
//! - [`store`]: JSON-lines persistence and CSV summaries.
//! - [`config`]: flat key-value run configuration.

pub mod config;
pub mod error;
pub mod group;
pub mod mea;
pub mod phase;
pub mod rl;
pub mod sim;
pub mod store;
pub mod trajectory;
pub mod voxel;

pub use error::{Error, Result};
