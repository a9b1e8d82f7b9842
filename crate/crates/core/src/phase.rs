//! Splitting an episode into non-trivial, trivial and termination phases.
//!
//! `t ∈ [0, H_p)` is the non-trivial phase (free-space motion, augmented
//! with non-trivial representations), `t ∈ [H_p, H)` the trivial phase
//! (possible contact, identity only) and `t = H` the termination phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseLabel {
    NonTrivial,
    Trivial,
    Termination,
}

/// Labels for `t = 0..=horizon`.
pub fn label_phases(horizon: usize, h_p: usize) -> Vec<PhaseLabel> {
    (0..=horizon)
        .map(|t| {
            if t == horizon {
                PhaseLabel::Termination
            } else if t < h_p {
                PhaseLabel::NonTrivial
            } else {
                PhaseLabel::Trivial
            }
        })
        .collect()
}

/// Gripper heights `z_t = z_0 + Δxyz·Σ_{j<t} a^z_j` for `t = 0..=H`,
/// dead-reckoned from the initial height and the recorded z-actions.
pub fn dead_reckoned_heights(ep: &Episode, delta_xyz: f64) -> Result<Vec<f64>> {
    let z0 = ep
        .meta
        .initial_state
        .as_ref()
        .map(|s| s.gripper.position.z)
        .ok_or(Error::MissingInitialHeight)?;
    let mut heights = Vec::with_capacity(ep.transitions.len());
    let mut z = z0;
    heights.push(z);
    for tr in ep.transitions.iter().take(ep.horizon()) {
        z += tr.action.xyz.z * delta_xyz;
        heights.push(z);
    }
    Ok(heights)
}

/// First timestep whose height lies below `l_z`, or `len` when none does.
pub fn first_crossing(heights: &[f64], l_z: f64) -> Option<usize> {
    heights.iter().position(|&z| z < l_z)
}

/// Height criterion: `H_p` is the first `t` at which the gripper is below
/// `l_z`; every later transition is trivial. Returns `H` when the gripper
/// never descends.
pub fn segment_by_height(ep: &Episode, l_z: f64, delta_xyz: f64) -> Result<usize> {
    let heights = dead_reckoned_heights(ep, delta_xyz)?;
    Ok(first_crossing(&heights, l_z).unwrap_or(ep.horizon()))
}

/// Timestep criterion: `H_p = H − h_p` for a fixed `h_p ∈ (0, H]`.
pub fn segment_by_timestep(horizon: usize, h_p: usize) -> Result<usize> {
    if h_p == 0 || h_p > horizon {
        return Err(Error::PhaseOutOfRange { h_p, horizon });
    }
    Ok(horizon - h_p)
}

/// How `H_p` is chosen for the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Segmenter {
    /// Height crossing minus `margin` steps (applied only when a crossing
    /// exists), so the estimate errs on the early side.
    Height { l_z: f64, margin: usize },
    Timestep { h_p: usize },
}

impl Segmenter {
    pub const DEFAULT_MARGIN: usize = 1;

    pub fn height(l_z: f64) -> Self {
        Segmenter::Height {
            l_z,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn segment(&self, ep: &Episode, delta_xyz: f64) -> Result<usize> {
        match *self {
            Segmenter::Height { l_z, margin } => {
                let heights = dead_reckoned_heights(ep, delta_xyz)?;
                Ok(match first_crossing(&heights, l_z) {
                    Some(t) => t.saturating_sub(margin),
                    None => ep.horizon(),
                })
            }
            Segmenter::Timestep { h_p } => segment_by_timestep(ep.horizon(), h_p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Vec3;
    use crate::sim::{Pose, SimState};
    use crate::trajectory::{Action, EpisodeMeta, Observation, Origin, PointCloud, Transition};

    /// Episode whose dead-reckoned heights equal `heights` with Δxyz = 0.01.
    fn episode_with_heights(heights: &[f64]) -> Episode {
        let delta = 0.01;
        let obs = Observation {
            object_clouds: vec![PointCloud::default()],
            gripper_cloud: PointCloud::default(),
            jaw: 1.0,
        };
        let n = heights.len();
        let transitions = (0..n)
            .map(|t| {
                let dz = if t + 1 < n { (heights[t + 1] - heights[t]) / delta } else { 0.0 };
                Transition {
                    action: Action::new(Vec3::new(0.0, 0.0, dz), 0.0, 1.0),
                    reward: 0.0,
                    observation: obs.clone(),
                    terminal: t + 1 == n,
                }
            })
            .collect();
        Episode {
            transitions,
            phase_boundary: None,
            origin: Origin::Demonstration,
            meta: EpisodeMeta {
                initial_state: Some(SimState {
                    gripper: Pose::new(Vec3::new(0.0, 0.0, heights[0]), 0.0),
                    jaw: 1.0,
                    objects: vec![],
                    movable: vec![],
                    grasped: None,
                    step_count: 0,
                }),
                ..EpisodeMeta::default()
            },
        }
    }

    #[test]
    fn height_first_crossing() {
        let ep = episode_with_heights(&[0.3, 0.3, 0.25, 0.18, 0.1, 0.1, 0.3]);
        assert_eq!(segment_by_height(&ep, 0.2, 0.01).unwrap(), 3);
        // Conservative variant moves the boundary one step earlier.
        assert_eq!(Segmenter::height(0.2).segment(&ep, 0.01).unwrap(), 2);
    }

    #[test]
    fn height_degenerate_start_below() {
        let ep = episode_with_heights(&[0.1, 0.1, 0.12]);
        assert_eq!(segment_by_height(&ep, 0.2, 0.01).unwrap(), 0);
        assert_eq!(Segmenter::height(0.2).segment(&ep, 0.01).unwrap(), 0);
    }

    #[test]
    fn height_never_descends() {
        let ep = episode_with_heights(&[0.3, 0.31, 0.32, 0.3]);
        assert_eq!(segment_by_height(&ep, 0.2, 0.01).unwrap(), 3);
        assert_eq!(Segmenter::height(0.2).segment(&ep, 0.01).unwrap(), 3);
    }

    #[test]
    fn height_requires_initial_state() {
        let mut ep = episode_with_heights(&[0.3, 0.2]);
        ep.meta.initial_state = None;
        assert!(matches!(segment_by_height(&ep, 0.2, 0.01), Err(Error::MissingInitialHeight)));
    }

    #[test]
    fn timestep_criterion() {
        assert_eq!(segment_by_timestep(80, 20).unwrap(), 60);
        assert_eq!(segment_by_timestep(10, 10).unwrap(), 0);
        assert!(matches!(
            segment_by_timestep(10, 11),
            Err(Error::PhaseOutOfRange { h_p: 11, horizon: 10 })
        ));
        assert!(segment_by_timestep(10, 0).is_err());
    }

    #[test]
    fn labels_are_total() {
        for h in 0..12 {
            for hp in 0..=h {
                let labels = label_phases(h, hp);
                assert_eq!(labels.len(), h + 1);
                assert_eq!(labels[h], PhaseLabel::Termination);
                for (t, l) in labels.iter().enumerate().take(h) {
                    let expected = if t < hp { PhaseLabel::NonTrivial } else { PhaseLabel::Trivial };
                    assert_eq!(*l, expected);
                }
            }
        }
    }
}
