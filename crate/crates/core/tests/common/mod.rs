#![allow(dead_code)]

use mea_core::group::{RotationAngle, Vec3};
use mea_core::sim::{EnvConfig, KinSim, SimState};
use mea_core::trajectory::{Episode, Observation};

pub fn demos(sim: &KinSim, seed: u64, n: usize) -> Vec<Episode> {
    (0..n as u64).map(|i| sim.scripted_demo(seed * 10_000 + i)).collect()
}

pub fn initial(ep: &Episode) -> &SimState {
    ep.meta.initial_state.as_ref().expect("simulator episodes record their initial state")
}

/// First timestep at which the true simulator state leaves the free regime
/// (gripper below `L_z` or something grasped); `H` when it never does.
pub fn true_first_interaction(sim: &KinSim, ep: &Episode) -> usize {
    let states = sim.replay(ep, initial(ep)).unwrap();
    let l_z = sim.config().l_z;
    states
        .iter()
        .position(|s| s.gripper.position.z < l_z || s.grasped.is_some())
        .unwrap_or(ep.horizon())
}

/// Forward construction of what an augmented episode's observations must be,
/// independent of the library's reverse-time sums.
///
/// Objects do not move during the free phase, so in the gripper-centric frame
/// an object cloud only shifts by the difference in accumulated gripper
/// displacement, and the gripper cloud only turns by the difference in
/// accumulated yaw. Both paths end at the same state at `H_p`, so the offset
/// at `t` is measured backwards from `H_p`.
pub fn forward_oracle(gt: &Episode, aug: &Episode, h_p: usize, env: &EnvConfig) -> Vec<Observation> {
    let path = |ep: &Episode| -> (Vec<Vec3>, Vec<f64>) {
        let mut p = vec![Vec3::zeros()];
        let mut y = vec![0.0];
        for tr in &ep.transitions[..h_p] {
            p.push(p.last().unwrap() + tr.action.xyz * env.delta_xyz);
            y.push(y.last().unwrap() + tr.action.theta * env.delta_theta);
        }
        (p, y)
    };
    let (gp, gy) = path(gt);
    let (ap, ay) = path(aug);
    gt.transitions
        .iter()
        .enumerate()
        .map(|(t, tr)| {
            if t >= h_p {
                return tr.observation.clone();
            }
            // Position relative to the anchor at H_p.
            let g_rel = gp[t] - gp[h_p];
            let a_rel = ap[t] - ap[h_p];
            let shift = g_rel - a_rel;
            let turn = (ay[t] - ay[h_p]) - (gy[t] - gy[h_p]);
            Observation {
                object_clouds: tr.observation.object_clouds.iter().map(|c| c.translated(&shift)).collect(),
                gripper_cloud: tr.observation.gripper_cloud.rotated(RotationAngle(turn)),
                jaw: tr.observation.jaw,
            }
        })
        .collect()
}
