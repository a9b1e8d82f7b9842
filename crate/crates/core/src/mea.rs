//! Multi-group equivariant augmentation (MEA) of recorded episodes.
//!
//! Augmentation runs in reverse time. The termination transition and the
//! trivial phase `[H_p, H)` are copied verbatim, which pins the augmented
//! state at `H_p` to the ground truth. In the non-trivial phase `[0, H_p)`
//! every action is replaced by a structured transform of the original, and
//! each observation is moved so that replaying the new actions forward
//! lands exactly on the pinned state:
//!
//! * object clouds are translated by `−Δxyz·Σ_{j=t}^{H_p−1}(a_j − ā_j)`;
//! * the gripper cloud is rotated about z by `Δθ·Σ_{j=t}^{H_p−1}(a^θ_j − ā^θ_j)`;
//! * the jaw observation, rewards and terminal flags are unchanged.
//!
//! Because object motion is relative to the gripper-centric frame, the
//! translation is the inverse of the extra gripper displacement the new
//! actions would otherwise accumulate.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, RotationAngle, Vec3, C4, SIMULATION_TOLERANCE};
use crate::phase::Segmenter;
use crate::sim::{DiscreteAction, EnvConfig, KinSim, SimState};
use crate::trajectory::{Action, Episode, Origin, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Continuous,
    Discrete,
}

impl FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "continuous" => Ok(AugmentMode::Continuous),
            "discrete" => Ok(AugmentMode::Discrete),
            other => Err(format!("unknown augmentation mode {other:?}")),
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::Continuous => "continuous",
            AugmentMode::Discrete => "discrete",
        })
    }
}

/// How the radial scale vector `k` is built from `δr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadialMode {
    /// `k = [δr, δr, δz]`: shrinks the xy part while keeping its direction.
    DirectionPreserving,
    /// `k = [δr·a_x/r, δr·a_y/r, δz]` with `r = |a_xy|`, applied element-wise.
    /// This squares the xy components and loses their sign.
    #[serde(alias = "literal-eq17")]
    ElementWise,
}

impl FromStr for RadialMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "direction-preserving" => Ok(RadialMode::DirectionPreserving),
            "element-wise" | "literal-eq17" => Ok(RadialMode::ElementWise),
            other => Err(format!("unknown radial mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    /// Uniform draw from `[lo, hi)`; returns `lo` for a point interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn is_within(&self, lo: f64, hi: f64) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && self.lo >= lo && self.hi <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometricGroup {
    So2,
    C4,
}

impl FromStr for IsometricGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "so2" => Ok(IsometricGroup::So2),
            "c4" => Ok(IsometricGroup::C4),
            other => Err(format!("unknown isometric group {other:?}")),
        }
    }
}

impl IsometricGroup {
    pub fn sample_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> RotationAngle {
        match self {
            IsometricGroup::So2 => RotationAngle(rng.random_range(0.0..TAU)),
            IsometricGroup::C4 => C4::ALL[rng.random_range(0..4)].angle(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometricOverlay {
    pub group: IsometricGroup,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub mode: AugmentMode,
    pub delta_r_range: Interval,
    pub delta_z_range: Interval,
    pub delta_rot_range: Interval,
    pub delta_theta_range: Interval,
    /// Probability that a discrete-mode element is the identity.
    pub discrete_trivial_prob: f64,
    pub radial_mode: RadialMode,
    pub augmentations_per_demo: usize,
    pub isometric_overlay: Option<IsometricOverlay>,
    pub max_resample_retries: usize,
}

impl AugmentationPolicy {
    pub fn continuous() -> Self {
        AugmentationPolicy {
            mode: AugmentMode::Continuous,
            delta_r_range: Interval::new(0.75, 1.0),
            delta_z_range: Interval::new(0.75, 1.0),
            delta_rot_range: Interval::new(0.0, TAU),
            delta_theta_range: Interval::new(0.0, 0.3),
            discrete_trivial_prob: 0.7,
            radial_mode: RadialMode::DirectionPreserving,
            augmentations_per_demo: 6,
            isometric_overlay: Some(IsometricOverlay {
                group: IsometricGroup::So2,
                copies: 4,
            }),
            max_resample_retries: 200,
        }
    }

    /// Discrete-mode defaults; no isometric overlay.
    pub fn discrete() -> Self {
        AugmentationPolicy {
            mode: AugmentMode::Discrete,
            augmentations_per_demo: 200,
            isometric_overlay: None,
            ..AugmentationPolicy::continuous()
        }
    }

    pub fn for_mode(mode: AugmentMode) -> Self {
        match mode {
            AugmentMode::Continuous => Self::continuous(),
            AugmentMode::Discrete => Self::discrete(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("delta_r_range", self.delta_r_range.is_within(0.0, 1.0)),
            ("delta_z_range", self.delta_z_range.is_within(0.0, 1.0)),
            ("delta_rot_range", self.delta_rot_range.is_within(0.0, TAU)),
            ("delta_theta_range", self.delta_theta_range.is_within(0.0, 1.0)),
            ("discrete_trivial_prob", (0.0..=1.0).contains(&self.discrete_trivial_prob)),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Config(format!("aug.{name} is out of bounds")));
            }
        }
        Ok(())
    }
}

/// One group element per timestep `t = 0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupSequence {
    pub elements: Vec<GroupElement>,
}

impl GroupSequence {
    pub fn trivial(horizon: usize) -> Self {
        GroupSequence {
            elements: vec![GroupElement::Trivial; horizon + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Independent draws for `t < H_p`, identity elsewhere.
pub fn sample_group_sequence<R: Rng + ?Sized>(
    policy: &AugmentationPolicy,
    horizon: usize,
    h_p: usize,
    rng: &mut R,
) -> GroupSequence {
    let elements = (0..=horizon)
        .map(|t| {
            if t >= h_p {
                return GroupElement::Trivial;
            }
            match policy.mode {
                AugmentMode::Continuous => GroupElement::Continuous {
                    delta_r: policy.delta_r_range.sample(rng),
                    delta_z: policy.delta_z_range.sample(rng),
                    delta_rot: policy.delta_rot_range.sample(rng),
                    delta_theta: policy.delta_theta_range.sample(rng),
                },
                AugmentMode::Discrete => {
                    if rng.random::<f64>() < policy.discrete_trivial_prob {
                        GroupElement::Trivial
                    } else {
                        GroupElement::Discrete {
                            c4: C4::ALL[rng.random_range(0..4)],
                        }
                    }
                }
            }
        })
        .collect();
    GroupSequence { elements }
}

/// Structured continuous action: scale radially and in height, rotate about
/// z by `δrot`, add `δθ·ε` (ε ~ U[−1, 1]) to the rotation command, keep the
/// jaw, then clip to `[−1, 1]`.
pub fn augment_action_continuous<R: Rng + ?Sized>(
    a: &Action,
    g: &GroupElement,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Action {
    if g.is_trivial() {
        return *a;
    }
    let (delta_r, delta_z, delta_rot, delta_theta) = g.continuous_params();
    let k = match policy.radial_mode {
        RadialMode::DirectionPreserving => Vec3::new(delta_r, delta_r, delta_z),
        RadialMode::ElementWise => {
            let r = a.xyz.xy().norm();
            if r < 1e-12 {
                Vec3::new(0.0, 0.0, delta_z)
            } else {
                Vec3::new(a.xyz.x / r * delta_r, a.xyz.y / r * delta_r, delta_z)
            }
        }
    };
    let xyz = RotationAngle(delta_rot).apply_vec3(&k.component_mul(&a.xyz));
    let eps: f64 = rng.random_range(-1.0..=1.0);
    Action::new(xyz, a.theta + delta_theta * eps, a.jaw).clipped()
}

/// Discrete action under a C4 element: xy moves rotate, everything else is
/// left alone.
pub fn augment_action_discrete(a: DiscreteAction, g: &GroupElement) -> DiscreteAction {
    match g {
        GroupElement::Discrete { c4 } => a.rotated(*c4),
        _ => a,
    }
}

/// [`augment_action_discrete`] on a robot command. Errors when the command is
/// not one of the nine discrete actions.
pub fn augment_discrete_command(a: &Action, g: &GroupElement) -> Result<Action> {
    let d = DiscreteAction::from_command(a).ok_or(Error::NotDiscreteAction(a.to_array()))?;
    let rotated = augment_action_discrete(d, g);
    if rotated == d {
        return Ok(*a);
    }
    let mut out = rotated.to_command(a.jaw);
    out.jaw = a.jaw;
    Ok(out)
}

/// Builds the augmented episode for a given set of replacement actions.
///
/// `augmented_actions[t]` replaces the action at `t < h_p`; the slice must
/// have length `h_p`. Observations in the non-trivial phase are transformed
/// with the reverse-time suffix sums; everything at `t ≥ h_p` is copied.
pub fn transform_episode(
    ep: &Episode,
    h_p: usize,
    augmented_actions: &[Action],
    delta_xyz: f64,
    delta_theta: f64,
) -> Episode {
    assert_eq!(augmented_actions.len(), h_p, "one replacement action per non-trivial step");
    let mut transitions: Vec<Transition> = ep.transitions.clone();
    let mut xyz_sum = Vec3::zeros();
    let mut theta_sum = 0.0;
    for t in (0..h_p).rev() {
        let original = &ep.transitions[t];
        let new_action = augmented_actions[t];
        xyz_sum += original.action.xyz - new_action.xyz;
        theta_sum += original.action.theta - new_action.theta;

        let out = &mut transitions[t];
        out.action = new_action;
        let offset = -(xyz_sum * delta_xyz);
        if offset != Vec3::zeros() {
            for cloud in &mut out.observation.object_clouds {
                *cloud = cloud.translated(&offset);
            }
        }
        let angle = theta_sum * delta_theta;
        if angle != 0.0 {
            out.observation.gripper_cloud = out.observation.gripper_cloud.rotated(RotationAngle(angle));
        }
    }
    Episode {
        transitions,
        phase_boundary: Some(h_p),
        origin: Origin::Augmented,
        meta: crate::trajectory::EpisodeMeta {
            initial_state: None,
            source: ep.meta.source,
            group_sequence: None,
            isometric_angle: None,
        },
    }
}

/// Initial state from which the augmented actions reproduce the augmented
/// episode: the gripper is displaced by `Δxyz·Σ_{j<H_p}(a_j − ā_j)` and
/// yawed by `Δθ·Σ_{j<H_p}(a^θ_j − ā^θ_j)`; objects and jaw are unchanged.
pub fn reconstruct_initial_state(
    gt_initial: &SimState,
    gt: &Episode,
    augmented: &Episode,
    h_p: usize,
    env: &EnvConfig,
) -> SimState {
    let (xyz_sum, theta_sum) = gt.transitions[..h_p]
        .iter()
        .zip(&augmented.transitions[..h_p])
        .fold((Vec3::zeros(), 0.0), |(xs, ts), (a, b)| {
            (xs + (a.action.xyz - b.action.xyz), ts + (a.action.theta - b.action.theta))
        });
    let mut s = gt_initial.clone();
    s.gripper.position += xyz_sum * env.delta_xyz;
    s.gripper.yaw += theta_sum * env.delta_theta;
    s
}

/// Why an augmented candidate was rejected.
fn feasibility_violation(s0: &SimState, augmented: &Episode, h_p: usize, env: &EnvConfig) -> Option<String> {
    let mut p = s0.gripper.position;
    for t in 0..=h_p {
        if !env.in_rotation_safe_region(&p) {
            return Some(format!("gripper leaves the workspace at t = {t}"));
        }
        if t < h_p && p.z < env.l_z {
            return Some(format!("gripper dips below L_z at t = {t} in the non-trivial phase"));
        }
        if t < h_p {
            p += augmented.transitions[t].action.xyz * env.delta_xyz;
        }
    }
    None
}

/// Reverse-time augmentation of one episode with rejection resampling.
pub fn augment_episode<R: Rng + ?Sized>(
    ep: &Episode,
    h_p: usize,
    policy: &AugmentationPolicy,
    env: &EnvConfig,
    rng: &mut R,
) -> Result<Episode> {
    let horizon = ep.horizon();
    if h_p > horizon {
        return Err(Error::PhaseOutOfRange { h_p, horizon });
    }
    let attempts = policy.max_resample_retries + 1;
    let mut last_reason = String::from("no attempt made");
    for attempt in 0..attempts {
        let sequence = sample_group_sequence(policy, horizon, h_p, rng);
        let actions = ep.transitions[..h_p]
            .iter()
            .zip(&sequence.elements)
            .map(|(tr, g)| match policy.mode {
                AugmentMode::Continuous => Ok(augment_action_continuous(&tr.action, g, policy, rng)),
                AugmentMode::Discrete => augment_discrete_command(&tr.action, g),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut candidate = transform_episode(ep, h_p, &actions, env.delta_xyz, env.delta_theta);
        candidate.meta.group_sequence = Some(sequence);
        match &ep.meta.initial_state {
            Some(gt_s0) => {
                let s0 = reconstruct_initial_state(gt_s0, ep, &candidate, h_p, env);
                if let Some(reason) = feasibility_violation(&s0, &candidate, h_p, env) {
                    debug!("augmentation attempt {attempt} rejected: {reason}");
                    last_reason = reason;
                    continue;
                }
                candidate.meta.initial_state = Some(s0);
            }
            None => debug!("no initial state recorded; skipping the feasibility filter"),
        }
        return Ok(candidate);
    }
    Err(Error::RetriesExhausted {
        attempts,
        last_reason,
    })
}

/// Same rotation about the frame z-axis applied to every observation and to
/// every action's translation, at every timestep.
pub fn apply_isometric_overlay(ep: &Episode, angle: RotationAngle) -> Episode {
    let transitions = ep
        .transitions
        .iter()
        .map(|tr| Transition {
            action: Action::new(angle.apply_vec3(&tr.action.xyz), tr.action.theta, tr.action.jaw),
            reward: tr.reward,
            observation: tr.observation.rotated(angle),
            terminal: tr.terminal,
        })
        .collect();
    let mut meta = ep.meta.clone();
    meta.initial_state = ep.meta.initial_state.as_ref().map(|s| s.rotated_about_world_z(angle));
    meta.isometric_angle = Some(ep.meta.isometric_angle.unwrap_or(0.0) + angle.radians());
    Episode {
        transitions,
        phase_boundary: ep.phase_boundary,
        origin: Origin::IsometricAugmented,
        meta,
    }
}

/// Augments every demonstration: `augmentations_per_demo` MEA episodes each,
/// then, when configured, `copies` isometric rotations of the demonstration
/// and of each of its augmentations.
pub fn augment_demonstrations<R: Rng + ?Sized>(
    demos: &[Episode],
    env: &EnvConfig,
    policy: &AugmentationPolicy,
    segmenter: &Segmenter,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    policy.validate()?;
    let mut out = Vec::new();
    for (i, demo) in demos.iter().enumerate() {
        let h_p = match demo.phase_boundary {
            Some(h) => h,
            None => segmenter.segment(demo, env.delta_xyz)?,
        };
        let mut group = Vec::with_capacity(policy.augmentations_per_demo);
        for _ in 0..policy.augmentations_per_demo {
            let mut aug = augment_episode(demo, h_p, policy, env, rng)?;
            aug.meta.source = Some(i);
            group.push(aug);
        }
        if let Some(overlay) = policy.isometric_overlay {
            let mut rotated = Vec::new();
            for base in std::iter::once(demo).chain(group.iter()) {
                for _ in 0..overlay.copies {
                    let mut r = apply_isometric_overlay(base, overlay.group.sample_angle(rng));
                    r.meta.source = Some(i);
                    if r.phase_boundary.is_none() {
                        r.phase_boundary = Some(h_p);
                    }
                    rotated.push(r);
                }
            }
            group.extend(rotated);
        }
        out.extend(group);
    }
    Ok(out)
}

/// Outcome of checking the four multi-group conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Transition condition; `first_transition_failure` is the first `t`
    /// whose step `t → t+1` disagrees.
    pub transition: bool,
    pub reward: bool,
    pub observation: bool,
    pub initial_state: bool,
    pub first_transition_failure: Option<usize>,
    pub first_reward_failure: Option<usize>,
    pub first_observation_failure: Option<usize>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.transition && self.reward && self.observation && self.initial_state
    }

    fn failed() -> Self {
        ConditionReport {
            transition: false,
            reward: false,
            observation: false,
            initial_state: false,
            first_transition_failure: Some(0),
            first_reward_failure: Some(0),
            first_observation_failure: Some(0),
        }
    }
}

/// Replays as far as the simulator allows; returns the states reached.
fn replay_lenient(sim: &KinSim, ep: &Episode, s0: &SimState) -> Vec<SimState> {
    let mut states = vec![s0.clone()];
    for tr in ep.transitions.iter().take(ep.horizon()) {
        let last = states.last().unwrap();
        match sim.step(last, &tr.action) {
            Ok(out) => states.push(out.state),
            Err(_) => break,
        }
    }
    states
}

fn observation_consistent(sim: &KinSim, tr: &Transition, s: &SimState) -> bool {
    let obs = sim.observe(s);
    tr.observation.max_point_distance(&obs) <= SIMULATION_TOLERANCE
        && (tr.observation.jaw - obs.jaw).abs() <= SIMULATION_TOLERANCE
}

/// Checks transition, reward, observation and initial-state invariance of
/// `aug` against `gt` by replaying both in `sim`.
pub fn verify_multigroup_conditions(
    gt: &Episode,
    aug: &Episode,
    sim: &KinSim,
    s0_gt: &SimState,
    s0_aug: &SimState,
) -> ConditionReport {
    if gt.transitions.len() != aug.transitions.len() || gt.transitions.is_empty() {
        return ConditionReport::failed();
    }
    let horizon = gt.horizon();
    let gt_states = replay_lenient(sim, gt, s0_gt);
    let aug_states = replay_lenient(sim, aug, s0_aug);

    let step_ok = |ep: &Episode, states: &[SimState], t: usize| {
        states
            .get(t + 1)
            .is_some_and(|s| observation_consistent(sim, &ep.transitions[t + 1], s))
    };
    let first_transition_failure =
        (0..horizon).find(|&t| !(step_ok(gt, &gt_states, t) && step_ok(aug, &aug_states, t)));

    let first_reward_failure = (0..=horizon).find(|&t| {
        let recorded = aug.transitions[t].reward == gt.transitions[t].reward;
        let replayed = aug_states
            .get(t)
            .is_some_and(|s| sim.reward(s) == gt.transitions[t].reward);
        let flags = aug.transitions[t].terminal == gt.transitions[t].terminal;
        !(recorded && replayed && flags)
    });

    let first_observation_failure = (0..=horizon).find(|&t| {
        !aug_states
            .get(t)
            .is_some_and(|s| observation_consistent(sim, &aug.transitions[t], s))
    });

    ConditionReport {
        transition: first_transition_failure.is_none(),
        reward: first_reward_failure.is_none(),
        observation: first_observation_failure.is_none(),
        initial_state: sim.in_initial_support(s0_aug),
        first_transition_failure,
        first_reward_failure,
        first_observation_failure,
    }
}

/// Largest state difference at `t = H_p` between the replayed augmented
/// episode and the replayed ground truth.
pub fn phase_anchor_discrepancy(
    sim: &KinSim,
    gt: &Episode,
    aug: &Episode,
    s0_gt: &SimState,
    s0_aug: &SimState,
    h_p: usize,
) -> Result<f64> {
    let gt_states = sim.replay(gt, s0_gt)?;
    let aug_states = sim.replay(aug, s0_aug)?;
    match (gt_states.get(h_p), aug_states.get(h_p)) {
        (Some(a), Some(b)) => Ok(a.max_difference(b)),
        _ => Err(Error::LengthMismatch(format!("no replayed state at H_p = {h_p}"))),
    }
}
