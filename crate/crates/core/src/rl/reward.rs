//! Trajectory, safety and efficiency reward terms with two-stage masking.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, QuadrotorState};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, yaw_of};
use crate::safety::SafeControlResult;
use crate::trajectory::GoalState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStage {
    NominalOnly,
    SafetyGuided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub position_far: f64,
    pub position_near: f64,
    pub yaw: f64,
    pub spin: f64,
    pub crash: f64,
    pub low_altitude: f64,
    pub thrust_disagreement: f64,
    pub boundary_proximity: f64,
    pub no_solution: f64,
    pub efficiency: f64,
    /// Far-branch distance cap, m.
    pub clip_radius: f64,
    /// Distance at which the far and near branches meet, m.
    pub switch_radius: f64,
    /// Length scale of the near-goal exponential, m.
    pub decay_length: f64,
    pub low_altitude_height: f64,
    /// Barrier value at which the disagreement penalty fades out.
    pub margin_scale: f64,
    /// Barrier value below which the boundary penalty applies.
    pub boundary_threshold: f64,
    /// Efficiency multiplier while the safety filter is engaged in the
    /// safety-guided stage.
    pub mask_factor: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            position_far: 1.0,
            position_near: 1.0,
            yaw: 0.1,
            spin: 0.05,
            crash: 5.0,
            low_altitude: 1.0,
            thrust_disagreement: 0.5,
            boundary_proximity: 0.5,
            no_solution: 2.0,
            efficiency: 0.05,
            clip_radius: 2.0,
            switch_radius: 0.2,
            decay_length: 0.05,
            low_altitude_height: 0.2,
            margin_scale: 1.0,
            boundary_threshold: 0.2,
            mask_factor: 0.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            ("position_far", self.position_far),
            ("position_near", self.position_near),
            ("yaw", self.yaw),
            ("spin", self.spin),
            ("crash", self.crash),
            ("low_altitude", self.low_altitude),
            ("thrust_disagreement", self.thrust_disagreement),
            ("boundary_proximity", self.boundary_proximity),
            ("no_solution", self.no_solution),
            ("efficiency", self.efficiency),
            ("mask_factor", self.mask_factor),
        ];
        for (name, v) in coeffs {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("reward.{name} must be ≥ 0, got {v}")));
            }
        }
        for (name, v) in [
            ("switch_radius", self.switch_radius),
            ("decay_length", self.decay_length),
            ("low_altitude_height", self.low_altitude_height),
            ("margin_scale", self.margin_scale),
            ("boundary_threshold", self.boundary_threshold),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("reward.{name} must be > 0, got {v}")));
            }
        }
        if self.clip_radius < self.switch_radius {
            return Err(Error::Config(format!(
                "reward.clip_radius {} is below switch_radius {}; the position term would be discontinuous",
                self.clip_radius, self.switch_radius
            )));
        }
        Ok(())
    }
}

/// Per-term rewards, each already multiplied by Δt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub position: f64,
    pub yaw: f64,
    pub spin: f64,
    pub crash: f64,
    pub low_altitude: f64,
    pub disagreement: f64,
    pub boundary: f64,
    pub no_solution: f64,
    pub efficiency: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn terms(&self) -> [f64; 9] {
        [
            self.position,
            self.yaw,
            self.spin,
            self.crash,
            self.low_altitude,
            self.disagreement,
            self.boundary,
            self.no_solution,
            self.efficiency,
        ]
    }

    pub const TERM_NAMES: [&'static str; 9] = [
        "position",
        "yaw",
        "spin",
        "crash",
        "low_altitude",
        "disagreement",
        "boundary",
        "no_solution",
        "efficiency",
    ];
}

/// Position reward as a function of goal distance: a clipped linear cost
/// beyond the switch radius, and inside it an exponential rising to
/// +position_near at d = 0, shifted so both branches meet at the switch.
pub fn position_term(d: f64, w: &RewardWeights) -> f64 {
    let s = w.switch_radius;
    if d > s {
        -w.position_far * d.min(w.clip_radius)
    } else {
        let shape = (1.0 - (-d / w.decay_length).exp()) / (1.0 - (-s / w.decay_length).exp());
        w.position_near - (w.position_near + w.position_far * s) * shape
    }
}

/// (position, yaw, spin) terms before Δt scaling.
pub fn r_trajectory(state: &QuadrotorState, goal: &GoalState, w: &RewardWeights) -> (f64, f64, f64) {
    let d = (state.position - goal.position()).norm();
    let yaw_err = wrap_angle(yaw_of(&state.rotation) - goal.yaw());
    let spin = (state.angular_velocity - goal.angular_velocity()).norm_squared();
    (position_term(d, w), -w.yaw * yaw_err.abs(), -w.spin * spin)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyTerms {
    pub crash: f64,
    pub low_altitude: f64,
    pub disagreement: f64,
    pub boundary: f64,
    pub no_solution: f64,
}

/// Safety terms before Δt scaling, and whether the filter was engaged.
/// Without a filter result only the crash and altitude terms apply.
pub fn r_safety(
    state: &QuadrotorState,
    u_policy: &ControlInput,
    sbc: Option<&SafeControlResult>,
    grounded: bool,
    w: &RewardWeights,
) -> (SafetyTerms, bool) {
    let mut t = SafetyTerms::default();
    if grounded {
        t.crash = -w.crash;
    }
    let z = state.position.z.max(0.0);
    if z < w.low_altitude_height {
        t.low_altitude = -w.low_altitude * (w.low_altitude_height - z) / w.low_altitude_height;
    }
    let Some(sbc) = sbc else {
        return (t, false);
    };
    if !sbc.feasible {
        t.no_solution = -w.no_solution;
        return (t, true);
    }
    let min_margin = sbc.min_margin();
    let diff = (u_policy.as_vector() - sbc.safe_thrusts.as_vector()).norm();
    let proximity = (1.0 - min_margin / w.margin_scale).max(0.0);
    t.disagreement = -w.thrust_disagreement * diff * proximity;
    if min_margin < w.boundary_threshold {
        t.boundary = -w.boundary_proximity * (1.0 - min_margin / w.boundary_threshold);
    }
    (t, sbc.filter_active)
}

pub fn r_efficiency(u_policy: &ControlInput, sbc_active: bool, stage: TrainStage, w: &RewardWeights) -> f64 {
    let base = -w.efficiency * u_policy.norm();
    if stage == TrainStage::SafetyGuided && sbc_active {
        base * w.mask_factor
    } else {
        base
    }
}

/// Full Δt-scaled breakdown. In the nominal stage the filter result is
/// ignored, so every filter-derived term is zero.
#[allow(clippy::too_many_arguments)]
pub fn total_reward(
    state: &QuadrotorState,
    goal: &GoalState,
    u_policy: &ControlInput,
    sbc: Option<&SafeControlResult>,
    grounded: bool,
    stage: TrainStage,
    w: &RewardWeights,
    dt: f64,
) -> RewardBreakdown {
    let sbc = match stage {
        TrainStage::NominalOnly => None,
        TrainStage::SafetyGuided => sbc,
    };
    let (position, yaw, spin) = r_trajectory(state, goal, w);
    let (s, active) = r_safety(state, u_policy, sbc, grounded, w);
    let efficiency = r_efficiency(u_policy, active, stage, w);
    let mut b = RewardBreakdown {
        position: dt * position,
        yaw: dt * yaw,
        spin: dt * spin,
        crash: dt * s.crash,
        low_altitude: dt * s.low_altitude,
        disagreement: dt * s.disagreement,
        boundary: dt * s.boundary,
        no_solution: dt * s.no_solution,
        efficiency: dt * efficiency,
        total: 0.0,
    };
    b.total = b.terms().iter().sum();
    b
}
