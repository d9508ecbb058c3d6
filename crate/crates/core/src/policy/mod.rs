//! Compact attention actor and recurrent attention critic, both with
//! hand-written reverse-mode gradients over flat parameter vectors.

pub mod actor;
pub mod critic;
pub mod dist;
pub mod nn;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::QuadrotorState;
use crate::sensing::{CondensedFrame, NeighborView, SdfGrid, MAX_RANGE};
use crate::trajectory::GoalState;

pub use actor::{Actor, ActorOutput, ActorTape};
pub use critic::{Critic, CriticTape};
pub use dist::{ActionDistribution, SampledAction, LOG_STD_MAX, LOG_STD_MIN};

pub const SELF_DIM: usize = 24;
pub const NEIGHBOR_SLOTS: usize = 2;
pub const NEIGHBOR_DIM: usize = 6;
pub const OBSTACLE_DIM: usize = 32;
pub const SDF_DIM: usize = 9;
pub const ACTION_DIM: usize = 4;
/// Relative goal position is clipped to this norm before it is observed.
pub const GOAL_CLIP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub critic_hidden: usize,
    pub critic_heads: usize,
    /// Off turns the critic's gated cell into a feedforward layer by
    /// feeding it a zero hidden state every step.
    pub recurrent_critic: bool,
    pub log_std_init: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 32,
            critic_hidden: 64,
            critic_heads: 4,
            recurrent_critic: true,
            log_std_init: -1.6,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.hidden == 0 || self.critic_hidden == 0 || self.critic_heads == 0 {
            return Err(crate::Error::Config("policy widths must be positive".into()));
        }
        if self.critic_hidden % self.critic_heads != 0 {
            return Err(crate::Error::Config(format!(
                "critic_hidden {} is not divisible by critic_heads {}",
                self.critic_hidden, self.critic_heads
            )));
        }
        Ok(())
    }
}

/// Per-agent observation shared by actor and critic. All vectors are in
/// the agent's body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    /// Goal-relative position (3, clipped to [`GOAL_CLIP`]) and velocity (3),
    /// relative rotation R_goalᵀR row-major (9), ω − ω_goal (3), own
    /// velocity (3), own body rate (3).
    pub self_goal: [f64; SELF_DIM],
    /// Relative position and velocity of the nearest neighbors, zero when
    /// the slot is empty.
    pub neighbors: [[f64; NEIGHBOR_DIM]; NEIGHBOR_SLOTS],
    pub neighbor_mask: [f64; NEIGHBOR_SLOTS],
    /// Age of the packet behind each neighbor slot, s.
    pub neighbor_staleness: [f64; NEIGHBOR_SLOTS],
    /// Filtered condensed ranges, 4 sensors × 8 zones.
    pub obstacles: [f64; OBSTACLE_DIM],
    /// Critic-only 3×3 clearance grid.
    pub sdf: [f64; SDF_DIM],
}

impl ObservationBundle {
    pub fn build(
        state: &QuadrotorState,
        goal: &GoalState,
        neighbors: &NeighborView,
        ranges: &CondensedFrame,
        sdf: &SdfGrid,
        now: f64,
    ) -> Self {
        let rt: Matrix3<f64> = state.rotation.transpose();
        let mut rel_pos = goal.position() - state.position;
        let n = rel_pos.norm();
        if n > GOAL_CLIP {
            rel_pos *= GOAL_CLIP / n;
        }
        let rel_pos = rt * rel_pos;
        let rel_vel = rt * (goal.velocity() - state.velocity);
        let rel_rot = goal.rotation().transpose() * state.rotation;
        let rel_omega = state.angular_velocity - goal.angular_velocity();
        let v_body = rt * state.velocity;

        let mut e = [0.0; SELF_DIM];
        e[0..3].copy_from_slice(rel_pos.as_slice());
        e[3..6].copy_from_slice(rel_vel.as_slice());
        for i in 0..3 {
            for j in 0..3 {
                e[6 + 3 * i + j] = rel_rot[(i, j)];
            }
        }
        e[15..18].copy_from_slice(rel_omega.as_slice());
        e[18..21].copy_from_slice(v_body.as_slice());
        e[21..24].copy_from_slice(state.angular_velocity.as_slice());

        let mut slots = [[0.0; NEIGHBOR_DIM]; NEIGHBOR_SLOTS];
        let mut mask = [0.0; NEIGHBOR_SLOTS];
        let mut staleness = [0.0; NEIGHBOR_SLOTS];
        for (k, p) in neighbors.packets.iter().take(NEIGHBOR_SLOTS).enumerate() {
            if let Some(p) = p {
                let dp = rt * (Vector3::from(p.position) - state.position);
                let dv = rt * (Vector3::from(p.velocity) - state.velocity);
                slots[k][0..3].copy_from_slice(dp.as_slice());
                slots[k][3..6].copy_from_slice(dv.as_slice());
                mask[k] = 1.0;
                staleness[k] = now - p.send_time;
            }
        }

        let mut obstacles = [MAX_RANGE; OBSTACLE_DIM];
        for (s, row) in ranges.iter().enumerate() {
            obstacles[s * 8..(s + 1) * 8].copy_from_slice(row);
        }

        ObservationBundle {
            self_goal: e,
            neighbors: slots,
            neighbor_mask: mask,
            neighbor_staleness: staleness,
            obstacles,
            sdf: sdf.flatten(),
        }
    }
}

/// Fixed input scaling applied inside both networks: body rates shrink by
/// 10, ranges and clearances are recentred from [0, 2] to [−1, 1].
pub(crate) fn scale_self(e: &[f64; SELF_DIM]) -> Vec<f64> {
    let mut x = e.to_vec();
    for i in (15..18).chain(21..24) {
        x[i] *= 0.1;
    }
    x
}

pub(crate) fn scale_ranges(r: &[f64]) -> Vec<f64> {
    r.iter().map(|v| v - 1.0).collect()
}

pub(crate) fn neighbor_input(slot: &[f64; NEIGHBOR_DIM], mask: f64) -> Vec<f64> {
    let mut x = slot.to_vec();
    x.push(mask);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_rotation;
    use crate::sensing::NeighborPacket;

    #[test]
    fn build_at_goal_is_identity_rotation() {
        let s = QuadrotorState::at_rest(Vector3::new(1.0, 2.0, 1.0));
        let g = GoalState::hover_at(Vector3::new(1.0, 2.0, 1.0), 0.0);
        let o = ObservationBundle::build(
            &s,
            &g,
            &NeighborView::empty(2),
            &[[2.0; 8]; 4],
            &SdfGrid { cells: [[2.0; 3]; 3] },
            0.0,
        );
        assert_eq!(&o.self_goal[0..6], &[0.0; 6]);
        assert_eq!(&o.self_goal[6..15], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(o.neighbor_mask, [0.0, 0.0]);
        assert_eq!(o.neighbors, [[0.0; 6]; 2]);
    }

    #[test]
    fn body_frame_and_clip() {
        let mut s = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        s.rotation = yaw_rotation(std::f64::consts::FRAC_PI_2);
        let g = GoalState::hover_at(Vector3::new(0.0, 5.0, 1.0), 0.0);
        let view = NeighborView {
            packets: vec![
                Some(NeighborPacket {
                    sender: 3,
                    position: [0.5, 0.0, 1.0],
                    velocity: [0.0; 3],
                    send_time: 0.01,
                }),
                None,
            ],
        };
        let o = ObservationBundle::build(&s, &g, &view, &[[2.0; 8]; 4], &SdfGrid { cells: [[2.0; 3]; 3] }, 0.025);
        // goal straight ahead in the body frame, clipped to 2 m
        assert!((o.self_goal[0] - 2.0).abs() < 1e-12);
        assert!(o.self_goal[1].abs() < 1e-12);
        // neighbor at world +x is on the body's right (−y)
        assert!((o.neighbors[0][1] + 0.5).abs() < 1e-12);
        assert_eq!(o.neighbor_mask, [1.0, 0.0]);
        assert!((o.neighbor_staleness[0] - 0.015).abs() < 1e-15);
    }
}
