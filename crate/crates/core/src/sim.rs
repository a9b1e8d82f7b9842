//! Deterministic gripper-centric kinematic pick environment.
//!
//! The world holds one gripper and `M` cuboid objects resting on the floor.
//! Above the interaction height `L_z`, with nothing grasped, the transition
//! is exactly the deterministic prediction: the gripper translates by
//! `a_xyz·Δxyz`, yaws by `a_θ·Δθ`, and the jaw takes the commanded value.
//! Below `L_z` the same kinematics apply, plus a contact rule: closing the
//! jaw grasps the nearest movable object whose centre lies within
//! `capture_radius` of the gripper centre, after which the object moves
//! rigidly with the gripper. Immovable objects never move.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{RotationAngle, Vec3, C4, SIMULATION_TOLERANCE};
use crate::trajectory::{Action, Episode, EpisodeMeta, Observation, Origin, PointCloud, Transition};

/// Jaw values below this are treated as closed.
pub const JAW_CLOSE_THRESHOLD: f64 = -0.5;
pub const JAW_OPEN: f64 = 1.0;
pub const JAW_CLOSED: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Continuous,
    Discrete,
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionSpace::Continuous => "continuous",
            ActionSpace::Discrete => "discrete",
        })
    }
}

impl FromStr for ActionSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "continuous" => Ok(ActionSpace::Continuous),
            "discrete" => Ok(ActionSpace::Discrete),
            other => Err(format!("unknown action space {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min[0], self.max[0]),
            p.y.clamp(self.min[1], self.max[1]),
            p.z.clamp(self.min[2], self.max[2]),
        )
    }

    pub fn size(&self) -> Vec3 {
        Vec3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }
}

/// Environment parameters. Written verbatim into every episode file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub action_space: ActionSpace,
    /// Maximum translation per step, metres.
    pub delta_xyz: f64,
    /// Maximum rotation per step, radians.
    pub delta_theta: f64,
    pub h_max: usize,
    /// Interaction height threshold, metres.
    pub l_z: f64,
    /// Gripper motion limits; the floor is `workspace.min[2]`.
    pub workspace: Bounds,
    pub object_count: usize,
    /// Edge length of the cubic objects, metres.
    pub object_size: f64,
    /// Radius of the disc (centred on the workspace z-axis) in which
    /// objects and the gripper start.
    pub spawn_radius: f64,
    pub gripper_start_height: [f64; 2],
    pub capture_radius: f64,
    /// Height the grasped object's centre must reach for success.
    pub lift_height: f64,
    /// Points per body template; must be a perfect cube.
    pub points_per_segment: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let object_size = 0.04;
        EnvConfig {
            action_space: ActionSpace::Continuous,
            delta_xyz: 0.01,
            delta_theta: 0.05,
            h_max: 50,
            l_z: 2.0 * object_size,
            workspace: Bounds {
                min: [-0.3, -0.3, 0.0],
                max: [0.3, 0.3, 0.3],
            },
            object_count: 1,
            object_size,
            spawn_radius: 0.08,
            gripper_start_height: [0.10, 0.13],
            capture_radius: object_size / 2.0,
            lift_height: 2.0 * object_size,
            points_per_segment: 64,
        }
    }
}

impl EnvConfig {
    pub fn discrete() -> Self {
        EnvConfig {
            action_space: ActionSpace::Discrete,
            ..EnvConfig::default()
        }
    }

    pub fn floor(&self) -> f64 {
        self.workspace.min[2]
    }

    /// Height of a resting object's centre.
    pub fn rest_height(&self) -> f64 {
        self.floor() + self.object_size / 2.0
    }

    /// Radius of the largest z-axis cylinder inside the workspace; poses in it
    /// stay in bounds under any rotation about the workspace z-axis.
    pub fn inscribed_radius(&self) -> f64 {
        let w = &self.workspace;
        (w.max[0].min(-w.min[0])).min(w.max[1].min(-w.min[1]))
    }

    /// True when `p` lies in the workspace and within the inscribed cylinder.
    pub fn in_rotation_safe_region(&self, p: &Vec3) -> bool {
        self.workspace.contains(p) && p.xy().norm() <= self.inscribed_radius()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_xyz", self.delta_xyz),
            ("delta_theta", self.delta_theta),
            ("l_z", self.l_z),
            ("object_size", self.object_size),
            ("spawn_radius", self.spawn_radius),
            ("capture_radius", self.capture_radius),
            ("lift_height", self.lift_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("env.{name} must be positive, got {v}")));
            }
        }
        if self.h_max == 0 || self.object_count == 0 {
            return Err(Error::Config("env.h_max and env.object_count must be positive".into()));
        }
        if !self.workspace.is_valid() {
            return Err(Error::Config("env.workspace bounds are degenerate".into()));
        }
        if self.l_z <= self.floor() + self.object_size {
            return Err(Error::Config(
                "env.l_z must lie strictly above the floor plus the object height".into(),
            ));
        }
        if self.workspace.min[0] >= 0.0 || self.workspace.max[0] <= 0.0 || self.workspace.min[1] >= 0.0 || self.workspace.max[1] <= 0.0 {
            return Err(Error::Config("env.workspace must contain the z-axis".into()));
        }
        if self.spawn_radius > self.inscribed_radius() {
            return Err(Error::Config("env.spawn_radius exceeds the workspace".into()));
        }
        let [lo, hi] = self.gripper_start_height;
        if !(lo >= self.l_z && hi >= lo && hi <= self.workspace.max[2]) {
            return Err(Error::Config(
                "env.gripper_start_height must satisfy l_z <= min <= max <= workspace ceiling".into(),
            ));
        }
        if self.capture_radius >= self.l_z - self.rest_height() {
            return Err(Error::Config(
                "env.capture_radius must be smaller than the gap between l_z and a resting object".into(),
            ));
        }
        if self.lift_height > self.workspace.max[2] {
            return Err(Error::Config("env.lift_height is above the workspace ceiling".into()));
        }
        if cube_side(self.points_per_segment).is_none() {
            return Err(Error::Config(format!(
                "env.points_per_segment = {} is not a perfect cube >= 8",
                self.points_per_segment
            )));
        }
        Ok(())
    }
}

fn cube_side(n: usize) -> Option<usize> {
    (2..=n).take_while(|k| k * k * k <= n).find(|k| k * k * k == n)
}

/// k×k×k lattice filling a box of the given extents, centred on the origin.
fn lattice(side: usize, extents: Vec3) -> Vec<Vec3> {
    let coord = |i: usize, e: f64| e * (i as f64 / (side - 1) as f64 - 0.5);
    let mut pts = Vec::with_capacity(side * side * side);
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                pts.push(Vec3::new(coord(i, extents.x), coord(j, extents.y), coord(k, extents.z)));
            }
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose { position, yaw }
    }
}

/// Full simulator state in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub gripper: Pose,
    pub jaw: f64,
    pub objects: Vec<Pose>,
    /// Hidden from the controller; constant over a rollout.
    pub movable: Vec<bool>,
    pub grasped: Option<usize>,
    pub step_count: usize,
}

impl SimState {
    /// Position of object `i` relative to the gripper centre, world-aligned.
    pub fn relative_object_position(&self, i: usize) -> Vec3 {
        self.objects[i].position - self.gripper.position
    }

    /// Largest absolute difference over positions, yaws and jaw; infinite
    /// when the discrete parts (grasp, movability, object count) differ.
    pub fn max_difference(&self, other: &SimState) -> f64 {
        if self.objects.len() != other.objects.len()
            || self.movable != other.movable
            || self.grasped != other.grasped
        {
            return f64::INFINITY;
        }
        let pose_diff = |a: &Pose, b: &Pose| (a.position - b.position).amax().max((a.yaw - b.yaw).abs());
        self.objects
            .iter()
            .zip(&other.objects)
            .map(|(a, b)| pose_diff(a, b))
            .fold(pose_diff(&self.gripper, &other.gripper), f64::max)
            .max((self.jaw - other.jaw).abs())
    }

    /// Rotates the whole scene about the world z-axis through the workspace
    /// centre. Relative geometry, and hence every outcome, is preserved.
    pub fn rotated_about_world_z(&self, angle: RotationAngle) -> SimState {
        let rotate = |p: &Pose| Pose::new(angle.apply_vec3(&p.position), p.yaw + angle.radians());
        SimState {
            gripper: rotate(&self.gripper),
            objects: self.objects.iter().map(rotate).collect(),
            ..self.clone()
        }
    }

    /// Rigid translation of every body in the world frame.
    pub fn translated(&self, offset: &Vec3) -> SimState {
        let shift = |p: &Pose| Pose::new(p.position + offset, p.yaw);
        SimState {
            gripper: shift(&self.gripper),
            objects: self.objects.iter().map(shift).collect(),
            ..self.clone()
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SimState,
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
}

/// The nine-element discrete action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscreteAction {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
    PosTheta,
    NegTheta,
    ToggleJaw,
}

impl DiscreteAction {
    pub const ALL: [DiscreteAction; 9] = [
        DiscreteAction::PosX,
        DiscreteAction::NegX,
        DiscreteAction::PosY,
        DiscreteAction::NegY,
        DiscreteAction::PosZ,
        DiscreteAction::NegZ,
        DiscreteAction::PosTheta,
        DiscreteAction::NegTheta,
        DiscreteAction::ToggleJaw,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Unit direction and rotation command, ignoring the jaw.
    fn motion(self) -> ([i8; 3], i8) {
        match self {
            DiscreteAction::PosX => ([1, 0, 0], 0),
            DiscreteAction::NegX => ([-1, 0, 0], 0),
            DiscreteAction::PosY => ([0, 1, 0], 0),
            DiscreteAction::NegY => ([0, -1, 0], 0),
            DiscreteAction::PosZ => ([0, 0, 1], 0),
            DiscreteAction::NegZ => ([0, 0, -1], 0),
            DiscreteAction::PosTheta => ([0, 0, 0], 1),
            DiscreteAction::NegTheta => ([0, 0, 0], -1),
            DiscreteAction::ToggleJaw => ([0, 0, 0], 0),
        }
    }

    fn from_motion(xyz: [i8; 3], theta: i8) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.motion() == (xyz, theta))
    }

    /// Robot command for this action given the current jaw position. Motion
    /// actions hold the jaw; the toggle closes an open jaw and opens a
    /// closed one.
    pub fn to_command(self, current_jaw: f64) -> Action {
        let (xyz, theta) = self.motion();
        let jaw = match self {
            DiscreteAction::ToggleJaw if current_jaw >= JAW_CLOSE_THRESHOLD => JAW_CLOSED,
            DiscreteAction::ToggleJaw => JAW_OPEN,
            _ => current_jaw,
        };
        Action::new(
            Vec3::new(xyz[0] as f64, xyz[1] as f64, xyz[2] as f64),
            theta as f64,
            jaw,
        )
    }

    /// Recovers the discrete action from a robot command. A command without
    /// motion is the jaw toggle.
    pub fn from_command(a: &Action) -> Option<Self> {
        let to_unit = |v: f64| -> Option<i8> {
            if v == 0.0 {
                Some(0)
            } else if v == 1.0 {
                Some(1)
            } else if v == -1.0 {
                Some(-1)
            } else {
                None
            }
        };
        let xyz = [to_unit(a.xyz.x)?, to_unit(a.xyz.y)?, to_unit(a.xyz.z)?];
        let theta = to_unit(a.theta)?;
        Self::from_motion(xyz, theta)
    }

    /// Members of the subset that every group element leaves unchanged.
    pub fn is_rotation_invariant(self) -> bool {
        !matches!(
            self,
            DiscreteAction::PosX | DiscreteAction::NegX | DiscreteAction::PosY | DiscreteAction::NegY
        )
    }

    /// Quarter-turn of the xy part; z, θ and jaw actions pass through.
    pub fn rotated(self, c4: C4) -> Self {
        if self.is_rotation_invariant() {
            return self;
        }
        let ([x, y, z], theta) = self.motion();
        let (rx, ry) = c4.rotate_xy(x, y);
        Self::from_motion([rx, ry, z], theta).expect("C4 maps lattice axes onto lattice axes")
    }
}

/// Per-timestep comparison produced by the replay oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiscrepancy {
    pub t: usize,
    pub max_point_distance: f64,
    pub jaw_difference: f64,
    pub reward_match: bool,
    pub terminal_match: bool,
}

impl StepDiscrepancy {
    pub fn is_consistent(&self, tolerance: f64) -> bool {
        self.max_point_distance <= tolerance
            && self.jaw_difference <= tolerance
            && self.reward_match
            && self.terminal_match
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub steps: Vec<StepDiscrepancy>,
    /// Replayed simulator states, `states[t]` for every transition index.
    pub states: Vec<SimState>,
    pub feasible: bool,
    pub first_mismatch: Option<usize>,
    pub max_discrepancy: f64,
}

/// Kinematic simulator with fixed body templates.
#[derive(Debug, Clone)]
pub struct KinSim {
    config: EnvConfig,
    object_template: Vec<Vec3>,
    gripper_template: Vec<Vec3>,
}

impl KinSim {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let side = cube_side(config.points_per_segment).expect("validated");
        let s = config.object_size;
        let object_template = lattice(side, Vec3::new(s, s, s));
        // Elongated along x so the gripper's yaw is visible in its cloud.
        let gripper_template = lattice(side, Vec3::new(1.5 * s, 0.5 * s, s));
        Ok(KinSim {
            config,
            object_template,
            gripper_template,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self, seed: u64) -> (SimState, Observation) {
        let state = self.sample_initial_state(seed);
        let obs = self.observe(&state);
        (state, obs)
    }

    fn sample_initial_state(&self, seed: u64) -> SimState {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample_disc = |rng: &mut ChaCha8Rng| {
            let r = cfg.spawn_radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..TAU);
            (r * phi.cos(), r * phi.sin())
        };
        let min_separation = 1.5 * cfg.object_size;
        let mut objects: Vec<Pose> = Vec::with_capacity(cfg.object_count);
        while objects.len() < cfg.object_count {
            let (x, y) = sample_disc(&mut rng);
            let p = Vec3::new(x, y, cfg.rest_height());
            if objects.iter().all(|o| (o.position - p).xy().norm() >= min_separation) {
                objects.push(Pose::new(p, rng.random_range(0.0..TAU)));
            }
        }
        let movable_index = if cfg.object_count == 1 {
            0
        } else {
            rng.random_range(0..cfg.object_count)
        };
        let movable = (0..cfg.object_count).map(|i| i == movable_index).collect();
        let (gx, gy) = sample_disc(&mut rng);
        let [lo, hi] = cfg.gripper_start_height;
        let gz = if hi > lo { rng.random_range(lo..hi) } else { lo };
        SimState {
            gripper: Pose::new(Vec3::new(gx, gy, gz), rng.random_range(0.0..TAU)),
            jaw: JAW_OPEN,
            objects,
            movable,
            grasped: None,
            step_count: 0,
        }
    }

    /// True when `s` could have been produced by [`KinSim::reset`]: bodies in
    /// the workspace, gripper at or above `L_z`, jaw open, nothing grasped.
    pub fn in_initial_support(&self, s: &SimState) -> bool {
        let cfg = &self.config;
        s.step_count == 0
            && s.grasped.is_none()
            && s.jaw == JAW_OPEN
            && s.objects.len() == cfg.object_count
            && cfg.workspace.contains(&s.gripper.position)
            && s.gripper.position.z >= cfg.l_z
            && s.objects.iter().all(|o| cfg.workspace.contains(&o.position))
    }

    /// Gripper at or above `L_z` with nothing grasped: the regime in which the
    /// transition is the deterministic prediction.
    pub fn in_free_regime(&self, s: &SimState) -> bool {
        s.grasped.is_none() && s.gripper.position.z >= self.config.l_z
    }

    pub fn reward(&self, s: &SimState) -> f64 {
        match s.grasped {
            Some(i) if s.movable[i] && s.objects[i].position.z >= self.config.lift_height => 1.0,
            _ => 0.0,
        }
    }

    pub fn is_terminal(&self, s: &SimState) -> bool {
        self.reward(s) == 1.0 || s.step_count >= self.config.h_max
    }

    /// Deterministic next state for the no-interaction regime.
    pub fn predict_next_state(&self, s: &SimState, a: &Action) -> Result<SimState> {
        if !self.in_free_regime(s) {
            return Err(Error::AssumptionViolated(format!(
                "gripper at height {:.4} with grasp {:?} is not in the no-interaction regime",
                s.gripper.position.z, s.grasped
            )));
        }
        let a = a.clipped();
        let position = s.gripper.position + a.xyz * self.config.delta_xyz;
        if !self.config.workspace.contains(&position) {
            return Err(Error::AssumptionViolated(
                "predicted gripper position leaves the workspace".into(),
            ));
        }
        Ok(SimState {
            gripper: Pose::new(position, s.gripper.yaw + a.theta * self.config.delta_theta),
            jaw: a.jaw,
            step_count: s.step_count + 1,
            ..s.clone()
        })
    }

    fn transition(&self, s: &SimState, a: &Action) -> SimState {
        let cfg = &self.config;
        let a = a.clipped();
        let old = s.gripper.position;
        let position = cfg.workspace.clamp(&(old + a.xyz * cfg.delta_xyz));
        let dyaw = a.theta * cfg.delta_theta;
        let mut next = SimState {
            gripper: Pose::new(position, s.gripper.yaw + dyaw),
            jaw: a.jaw,
            step_count: s.step_count + 1,
            ..s.clone()
        };
        if let Some(i) = s.grasped {
            let rel = s.objects[i].position - old;
            let rot = RotationAngle(dyaw);
            next.objects[i] = Pose::new(position + rot.apply_vec3(&rel), s.objects[i].yaw + dyaw);
        }
        let was_open = s.jaw >= JAW_CLOSE_THRESHOLD;
        let is_closed = next.jaw < JAW_CLOSE_THRESHOLD;
        match (next.grasped, is_closed) {
            (None, true) if was_open => {
                next.grasped = self.capture_candidate(&next);
            }
            (Some(i), false) => {
                next.objects[i].position.z = cfg.rest_height();
                next.grasped = None;
            }
            _ => {}
        }
        next
    }

    fn capture_candidate(&self, s: &SimState) -> Option<usize> {
        s.objects
            .iter()
            .enumerate()
            .filter(|(i, _)| s.movable[*i])
            .map(|(i, o)| (i, (o.position - s.gripper.position).norm()))
            .filter(|(_, d)| *d <= self.config.capture_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn step(&self, s: &SimState, a: &Action) -> Result<StepOutcome> {
        if self.is_terminal(s) {
            return Err(Error::SteppedTerminal(s.step_count));
        }
        let state = self.transition(s, a);
        let observation = self.observe(&state);
        let reward = self.reward(&state);
        let terminal = self.is_terminal(&state);
        Ok(StepOutcome {
            state,
            observation,
            reward,
            terminal,
        })
    }

    pub fn observe(&self, s: &SimState) -> Observation {
        let origin = s.gripper.position;
        let body = |template: &[Vec3], pose: &Pose| {
            let m = RotationAngle(pose.yaw).matrix();
            let offset = pose.position - origin;
            PointCloud::new(template.iter().map(|p| m * p + offset).collect())
        };
        let grip_rot = RotationAngle(s.gripper.yaw).matrix();
        Observation {
            object_clouds: s.objects.iter().map(|o| body(&self.object_template, o)).collect(),
            gripper_cloud: PointCloud::new(self.gripper_template.iter().map(|p| grip_rot * p).collect()),
            jaw: s.jaw,
        }
    }

    /// Runs `policy` from `s0` until termination and records the episode.
    pub fn rollout<P>(&self, s0: SimState, mut policy: P) -> Episode
    where
        P: FnMut(&SimState, &Observation) -> Action,
    {
        let mut transitions = Vec::new();
        let mut state = s0.clone();
        let mut obs = self.observe(&state);
        let mut reward = self.reward(&state);
        let mut terminal = self.is_terminal(&state);
        while !terminal {
            let action = policy(&state, &obs).clipped();
            let out = self.step(&state, &action).expect("state is not terminal");
            transitions.push(Transition {
                action,
                reward,
                observation: obs,
                terminal,
            });
            state = out.state;
            obs = out.observation;
            reward = out.reward;
            terminal = out.terminal;
        }
        transitions.push(Transition {
            action: Action::hold(state.jaw),
            reward,
            observation: obs,
            terminal,
        });
        Episode {
            transitions,
            phase_boundary: None,
            origin: Origin::Demonstration,
            meta: EpisodeMeta {
                initial_state: Some(s0),
                ..EpisodeMeta::default()
            },
        }
    }

    /// Scripted pick: approach the movable object above `L_z`, descend,
    /// close the jaw and lift.
    pub fn scripted_demo(&self, seed: u64) -> Episode {
        let (s0, _) = self.reset(seed);
        match self.config.action_space {
            ActionSpace::Continuous => self.rollout(s0, |s, _| self.continuous_demo_action(s)),
            ActionSpace::Discrete => {
                self.rollout(s0, |s, _| self.discrete_demo_action(s).to_command(s.jaw))
            }
        }
    }

    fn target_object(&self, s: &SimState) -> usize {
        s.movable.iter().position(|m| *m).unwrap_or(0)
    }

    fn continuous_demo_action(&self, s: &SimState) -> Action {
        let cfg = &self.config;
        let step = |err: f64, scale: f64| (err / scale).clamp(-1.0, 1.0);
        if s.grasped.is_some() {
            return Action::new(Vec3::new(0.0, 0.0, 1.0), 0.0, JAW_CLOSED);
        }
        let target = s.objects[self.target_object(s)];
        let err = target.position - s.gripper.position;
        // Align to the nearest face of the cube (yaw symmetric under quarter turns).
        let yaw_err = {
            let d = (target.yaw - s.gripper.yaw).rem_euclid(FRAC_PI_2);
            if d > FRAC_PI_2 / 2.0 {
                d - FRAC_PI_2
            } else {
                d
            }
        };
        let theta = step(yaw_err, cfg.delta_theta);
        let aligned_xy = err.x.abs() <= 1e-9 && err.y.abs() <= 1e-9;
        if !aligned_xy {
            let hover = cfg.l_z + cfg.delta_xyz / 2.0;
            let dz = (hover - s.gripper.position.z).min(0.0);
            // Bound the planar command by the unit disc so that rotated copies
            // of the action stay inside the action box.
            let mut xy = err.xy() / cfg.delta_xyz;
            let n = xy.norm();
            if n > 1.0 {
                xy /= n;
            }
            return Action::new(Vec3::new(xy.x, xy.y, step(dz, cfg.delta_xyz)), theta, JAW_OPEN);
        }
        if err.z.abs() > 1e-9 {
            return Action::new(Vec3::new(0.0, 0.0, step(err.z, cfg.delta_xyz)), theta, JAW_OPEN);
        }
        Action::new(Vec3::zeros(), 0.0, JAW_CLOSED)
    }

    /// Greedy axis-by-axis approach used for the discrete action set.
    pub fn discrete_demo_action(&self, s: &SimState) -> DiscreteAction {
        let half = self.config.delta_xyz / 2.0;
        if s.grasped.is_some() {
            return DiscreteAction::PosZ;
        }
        if s.jaw < JAW_CLOSE_THRESHOLD {
            // Closed on nothing: reopen.
            return DiscreteAction::ToggleJaw;
        }
        let err = s.objects[self.target_object(s)].position - s.gripper.position;
        if err.x.abs() > half {
            return if err.x > 0.0 { DiscreteAction::PosX } else { DiscreteAction::NegX };
        }
        if err.y.abs() > half {
            return if err.y > 0.0 { DiscreteAction::PosY } else { DiscreteAction::NegY };
        }
        if err.z < -half {
            return DiscreteAction::NegZ;
        }
        DiscreteAction::ToggleJaw
    }

    /// Replays the episode's actions from `s0`, returning every visited state.
    pub fn replay(&self, ep: &Episode, s0: &SimState) -> Result<Vec<SimState>> {
        let mut states = Vec::with_capacity(ep.transitions.len());
        states.push(s0.clone());
        for (t, tr) in ep.transitions.iter().enumerate().take(ep.horizon()) {
            let current = &states[t];
            if self.is_terminal(current) {
                return Err(Error::LengthMismatch(format!(
                    "replay terminated at t = {t} but the episode has horizon {}",
                    ep.horizon()
                )));
            }
            let next = self.transition(current, &tr.action);
            states.push(next);
        }
        Ok(states)
    }

    /// Feasibility oracle: replays `ep` from `s0` and compares every recorded
    /// observation, reward and terminal flag with the simulator's.
    pub fn replay_check(&self, ep: &Episode, s0: &SimState) -> Result<FeasibilityReport> {
        if ep.transitions.is_empty() {
            return Err(Error::LengthMismatch("episode has no transitions".into()));
        }
        let states = self.replay(ep, s0)?;
        let steps: Vec<StepDiscrepancy> = ep
            .transitions
            .iter()
            .zip(&states)
            .enumerate()
            .map(|(t, (tr, s))| {
                let obs = self.observe(s);
                StepDiscrepancy {
                    t,
                    max_point_distance: tr.observation.max_point_distance(&obs),
                    jaw_difference: (tr.observation.jaw - obs.jaw).abs(),
                    reward_match: tr.reward == self.reward(s),
                    terminal_match: tr.terminal == self.is_terminal(s),
                }
            })
            .collect();
        let first_mismatch = steps
            .iter()
            .find(|d| !d.is_consistent(SIMULATION_TOLERANCE))
            .map(|d| d.t);
        let max_discrepancy = steps
            .iter()
            .map(|d| d.max_point_distance.max(d.jaw_difference))
            .fold(0.0, f64::max);
        Ok(FeasibilityReport {
            feasible: first_mismatch.is_none(),
            first_mismatch,
            max_discrepancy,
            steps,
            states,
        })
    }
}
