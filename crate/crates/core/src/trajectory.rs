//! Transitions, episodes and the replay buffer they are assigned to.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{RotationAngle, Vec3, SIMULATION_TOLERANCE};
use crate::mea::GroupSequence;
use crate::sim::{EnvConfig, SimState};

/// Normalized gripper command. Every component lies in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub xyz: Vec3,
    pub theta: f64,
    pub jaw: f64,
}

impl Action {
    pub fn new(xyz: Vec3, theta: f64, jaw: f64) -> Self {
        Action { xyz, theta, jaw }
    }

    /// Zero motion that keeps the jaw where it is.
    pub fn hold(jaw: f64) -> Self {
        Action::new(Vec3::zeros(), 0.0, jaw)
    }

    /// `[x, y, z, theta, jaw]`, the on-disk layout.
    pub fn to_array(&self) -> [f64; 5] {
        [self.xyz.x, self.xyz.y, self.xyz.z, self.theta, self.jaw]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Action::new(Vec3::new(a[0], a[1], a[2]), a[3], a[4])
    }

    pub fn clipped(&self) -> Action {
        let c = |v: f64| v.clamp(-1.0, 1.0);
        Action::new(self.xyz.map(c), c(self.theta), c(self.jaw))
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        for v in self.to_array() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::validation(
                    "action",
                    index,
                    format!("component {v} outside [-1, 1]"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| p + offset).collect())
    }

    /// Rotation about the frame's z-axis.
    pub fn rotated(&self, angle: RotationAngle) -> PointCloud {
        let m = angle.matrix();
        PointCloud::new(self.points.iter().map(|p| m * p).collect())
    }

    /// Largest distance between corresponding points; infinite when the
    /// clouds have different sizes.
    pub fn max_distance(&self, other: &PointCloud) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Point-cloud observation in the gripper-centric frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub object_clouds: Vec<PointCloud>,
    pub gripper_cloud: PointCloud,
    pub jaw: f64,
}

impl Observation {
    /// Largest point displacement over all segments.
    pub fn max_point_distance(&self, other: &Observation) -> f64 {
        if self.object_clouds.len() != other.object_clouds.len() {
            return f64::INFINITY;
        }
        self.object_clouds
            .iter()
            .zip(&other.object_clouds)
            .map(|(a, b)| a.max_distance(b))
            .fold(self.gripper_cloud.max_distance(&other.gripper_cloud), f64::max)
    }

    /// Same rotation applied to every segment.
    pub fn rotated(&self, angle: RotationAngle) -> Observation {
        Observation {
            object_clouds: self.object_clouds.iter().map(|c| c.rotated(angle)).collect(),
            gripper_cloud: self.gripper_cloud.rotated(angle),
            jaw: self.jaw,
        }
    }

    pub fn validate(&self, object_count: usize, index: usize) -> Result<()> {
        if self.object_clouds.len() != object_count {
            return Err(Error::validation(
                "object_clouds",
                index,
                format!("expected {object_count} segments, found {}", self.object_clouds.len()),
            ));
        }
        let all_points = self
            .object_clouds
            .iter()
            .chain(std::iter::once(&self.gripper_cloud))
            .flat_map(|c| c.points.iter());
        if all_points.flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("observation", index, "non-finite coordinate"));
        }
        if let Some(c) = self.gripper_cloud.centroid() {
            if c.norm() > SIMULATION_TOLERANCE {
                return Err(Error::validation(
                    "gripper_cloud",
                    index,
                    format!("centroid {:?} is not at the frame origin", c.as_slice()),
                ));
            }
        }
        if !self.jaw.is_finite() || !(-1.0..=1.0).contains(&self.jaw) {
            return Err(Error::validation("jaw_obs", index, format!("{} outside [-1, 1]", self.jaw)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub action: Action,
    pub reward: f64,
    pub observation: Observation,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Demonstration,
    Augmented,
    IsometricAugmented,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Demonstration => "demonstration",
            Origin::Augmented => "augmented",
            Origin::IsometricAugmented => "isometric-augmented",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "demonstration" => Ok(Origin::Demonstration),
            "augmented" => Ok(Origin::Augmented),
            "isometric-augmented" => Ok(Origin::IsometricAugmented),
            other => Err(format!("unknown origin tag {other:?}")),
        }
    }
}

/// Provenance carried alongside an episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMeta {
    /// Full simulator state at t = 0, when known. Used by the replay oracle.
    pub initial_state: Option<SimState>,
    /// Index of the demonstration this episode was derived from.
    pub source: Option<usize>,
    pub group_sequence: Option<GroupSequence>,
    pub isometric_angle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub phase_boundary: Option<usize>,
    pub origin: Origin,
    pub meta: EpisodeMeta,
}

impl Episode {
    /// Index of the final transition.
    pub fn horizon(&self) -> usize {
        self.transitions.len().saturating_sub(1)
    }

    pub fn is_success(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.reward == 1.0)
    }

    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::validation("transitions", 0, "episode has no transitions"));
        }
        let h = self.horizon();
        if h > env.h_max {
            return Err(Error::validation(
                "transitions",
                h,
                format!("horizon {h} exceeds H_max {}", env.h_max),
            ));
        }
        if let Some(hp) = self.phase_boundary {
            if hp > h {
                return Err(Error::validation(
                    "phase_boundary",
                    hp,
                    format!("H_p {hp} exceeds horizon {h}"),
                ));
            }
        }
        for (t, tr) in self.transitions.iter().enumerate() {
            tr.action.validate(t)?;
            if tr.reward != 0.0 && tr.reward != 1.0 {
                return Err(Error::validation("reward", t, format!("{} is not binary", tr.reward)));
            }
            if t < h && tr.reward != 0.0 {
                return Err(Error::validation("reward", t, "nonzero reward before terminal"));
            }
            if t < h && tr.terminal {
                return Err(Error::validation("terminal", t, "terminal flag before the last transition"));
            }
            if t == h && !tr.terminal {
                return Err(Error::validation("terminal", t, "last transition is not terminal"));
            }
            tr.observation.validate(env.object_count, t)?;
        }
        Ok(())
    }
}

/// FIFO buffer of validated episodes sharing one environment configuration.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    env: EnvConfig,
    episodes: VecDeque<Episode>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    /// `capacity = None` means unbounded.
    pub fn new(env: EnvConfig, capacity: Option<usize>) -> Self {
        ReplayBuffer {
            env,
            episodes: VecDeque::new(),
            capacity,
        }
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Validates and appends, returning the evicted episode when full.
    pub fn append_episode(&mut self, episode: Episode) -> Result<Option<Episode>> {
        episode.validate(&self.env)?;
        if self.capacity == Some(0) {
            return Ok(Some(episode));
        }
        self.episodes.push_back(episode);
        match self.capacity {
            Some(cap) if self.episodes.len() > cap => Ok(self.episodes.pop_front()),
            _ => Ok(None),
        }
    }

    pub fn extend(&mut self, episodes: impl IntoIterator<Item = Episode>) -> Result<()> {
        for ep in episodes {
            self.append_episode(ep)?;
        }
        Ok(())
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }
}
