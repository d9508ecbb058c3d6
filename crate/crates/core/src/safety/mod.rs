//! Safety barrier certificates and the minimally invasive safety filter.
//!
//! Pairwise certificates follow the double-integrator braking argument:
//! with relative position Δx = xⱼ − xᵢ and relative velocity Δv = vⱼ − vᵢ,
//!
//! ```text
//! h = √(2(αᵢ + αⱼ)(‖Δx‖ − Dₛ)) + Δx̂·Δv
//! ```
//!
//! is nonnegative while the pair can still brake apart. Obstacles are
//! neighbors with no control authority (αⱼ = 0) and a margin Dₛ/2 + r.
//! Inside the margin the square root is continued as an odd function so the
//! sign of `h` keeps its meaning.
//!
//! The filter works in acceleration space. Each certificate contributes a
//! linear constraint `normal · a ≥ offset` from ḣ + k·h ≥ 0; pairwise
//! constraints carry half of the required relative braking because both
//! agents run the same filter.

pub mod qp;

use nalgebra::{DVector, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{gravity, thrust_map, ControlInput, QuadrotorParams, QuadrotorState};
use crate::error::{Error, Result};
use crate::geometry::{Cylinder, Room};
use qp::{project, LinearConstraint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Braking authority α assumed for every agent, m/s².
    pub max_acceleration: f64,
    /// Minimum center distance Dₛ between two quadrotors.
    pub safety_distance: f64,
    /// Slope of the linear extended class-K function, 1/s.
    pub class_k_gain: f64,
    /// Box bound ‖a‖∞ on the safe acceleration.
    pub accel_bound: f64,
    pub neighbor_range: f64,
    pub max_neighbors: usize,
    pub obstacle_range: f64,
    /// A room face gets a constraint once the distance to it drops below
    /// this multiple of its margin Dₛ/2.
    pub wall_activation_factor: f64,
    /// Proportional attitude gain used to realize a safe acceleration as
    /// rotor commands, N·m per radian of tilt error.
    pub attitude_gain: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams {
            max_acceleration: 2.0,
            safety_distance: 0.15,
            class_k_gain: 1.0,
            accel_bound: 5.0,
            neighbor_range: 2.0,
            max_neighbors: 2,
            obstacle_range: 2.0,
            wall_activation_factor: 3.0,
            attitude_gain: 2.0e-3,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_acceleration", self.max_acceleration),
            ("safety_distance", self.safety_distance),
            ("class_k_gain", self.class_k_gain),
            ("accel_bound", self.accel_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("safety.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintSource {
    Neighbor(usize),
    Obstacle(usize),
    /// Room face: 0/1 = −x/+x wall, 2/3 = −y/+y wall, 4 = floor, 5 = ceiling.
    Boundary(usize),
}

/// `normal · a ≥ offset` in this agent's acceleration, m/s².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Barrier value h the constraint was built from.
    pub h: f64,
    pub source: ConstraintSource,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn margins(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.h).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeControlResult {
    pub safe_acceleration: Vector3<f64>,
    pub safe_thrusts: ControlInput,
    pub filter_active: bool,
    pub feasible: bool,
    pub margins: Vec<f64>,
}

impl SafeControlResult {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn signed_sqrt_term(k: f64, gap: f64) -> f64 {
    gap.signum() * (2.0 * k * gap.abs()).sqrt()
}

// Terms of ḣ that do not depend on this agent's acceleration. `dir` is the
// unit vector from agent to the other body, `closing` = dir·Δv.
struct BarrierGeometry {
    h: f64,
    dir: Vector3<f64>,
    drift: f64,
}

const MIN_GAP: f64 = 1e-6;

fn barrier(delta_x: &Vector3<f64>, delta_v: &Vector3<f64>, authority: f64, margin: f64) -> Result<BarrierGeometry> {
    let d = delta_x.norm();
    if d < 1e-12 {
        return Err(Error::DegenerateGeometry("coincident positions".into()));
    }
    let dir = delta_x / d;
    let closing = dir.dot(delta_v);
    let gap = d - margin;
    let h = signed_sqrt_term(authority, gap) + closing;
    // d/dt of the square-root term, regularized at the margin
    let root_rate = if authority > 0.0 {
        authority * closing / (2.0 * authority * gap.abs().max(MIN_GAP)).sqrt()
    } else {
        0.0
    };
    let tangential = (delta_v.norm_squared() - closing * closing).max(0.0) / d;
    Ok(BarrierGeometry {
        h,
        dir,
        drift: root_rate + tangential,
    })
}

/// Pairwise barrier value; positive when the pair can still brake apart.
pub fn h_quadrotor(
    state_i: &QuadrotorState,
    state_j: &QuadrotorState,
    params: &SafetyParams,
) -> Result<f64> {
    let a = 2.0 * params.max_acceleration;
    Ok(barrier(
        &(state_j.position - state_i.position),
        &(state_j.velocity - state_i.velocity),
        a,
        params.safety_distance,
    )?
    .h)
}

fn horizontal_offset(state: &QuadrotorState, obstacle: &Cylinder) -> Vector3<f64> {
    Vector3::new(
        obstacle.center[0] - state.position.x,
        obstacle.center[1] - state.position.y,
        0.0,
    )
}

/// Obstacle barrier measured to the cylinder axis in the horizontal plane.
pub fn h_obstacle(state: &QuadrotorState, obstacle: &Cylinder, params: &SafetyParams) -> Result<f64> {
    let mut rel_v = -state.velocity;
    rel_v.z = 0.0;
    Ok(barrier(
        &horizontal_offset(state, obstacle),
        &rel_v,
        params.max_acceleration,
        params.safety_distance / 2.0 + obstacle.radius,
    )?
    .h)
}

/// Picks the `max_neighbors` closest states within `neighbor_range`,
/// ascending by distance. Returns indices into `others`.
pub fn nearest_neighbors(
    self_state: &QuadrotorState,
    others: &[QuadrotorState],
    params: &SafetyParams,
) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = others
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.position - self_state.position).norm(), i))
        .filter(|(d, _)| *d <= params.neighbor_range)
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(params.max_neighbors).map(|(_, i)| i).collect()
}

/// Linearized barrier constraints for one agent. `neighbors` is expected to
/// be pre-filtered (see [`nearest_neighbors`]); coincident neighbors and
/// on-axis obstacles are skipped since the pair has already collided.
pub fn build_constraints(
    self_state: &QuadrotorState,
    neighbors: &[QuadrotorState],
    obstacles: &[Cylinder],
    room: &Room,
    params: &SafetyParams,
) -> ConstraintSet {
    let k = params.class_k_gain;
    let mut out = Vec::new();

    for (j, other) in neighbors.iter().enumerate() {
        let Ok(g) = barrier(
            &(other.position - self_state.position),
            &(other.velocity - self_state.velocity),
            2.0 * params.max_acceleration,
            params.safety_distance,
        ) else {
            continue;
        };
        // ḣ = drift + dir·aⱼ − dir·aᵢ; this agent supplies half
        out.push(Constraint {
            normal: -g.dir,
            offset: -0.5 * (g.drift + k * g.h),
            h: g.h,
            source: ConstraintSource::Neighbor(j),
        });
    }

    for (j, obstacle) in obstacles.iter().enumerate() {
        let offset = horizontal_offset(self_state, obstacle);
        if offset.norm() - obstacle.radius > params.obstacle_range {
            continue;
        }
        let mut rel_v = -self_state.velocity;
        rel_v.z = 0.0;
        let Ok(g) = barrier(
            &offset,
            &rel_v,
            params.max_acceleration,
            params.safety_distance / 2.0 + obstacle.radius,
        ) else {
            continue;
        };
        out.push(Constraint {
            normal: -g.dir,
            offset: -(g.drift + k * g.h),
            h: g.h,
            source: ConstraintSource::Obstacle(j),
        });
    }

    let margin = params.safety_distance / 2.0;
    let p = self_state.position;
    let v = self_state.velocity;
    for face in 0..6 {
        let axis = face / 2;
        let upper = face % 2 == 1;
        let (dist, outward) = if upper {
            (room.max[axis] - p[axis], 1.0)
        } else {
            (p[axis] - room.min[axis], -1.0)
        };
        if dist > params.wall_activation_factor * margin {
            continue;
        }
        let mut dir = Vector3::zeros();
        dir[axis] = outward;
        // the wall is static: Δv = −v, no tangential curvature term
        let closing = -dir.dot(&v);
        let gap = dist - margin;
        let a = params.max_acceleration;
        let h = signed_sqrt_term(a, gap) + closing;
        let drift = a * closing / (2.0 * a * gap.abs().max(MIN_GAP)).sqrt();
        out.push(Constraint {
            normal: -dir,
            offset: -(drift + k * h),
            h,
            source: ConstraintSource::Boundary(face),
        });
    }

    ConstraintSet { constraints: out }
}

fn box_constraints(bound: f64) -> Vec<LinearConstraint> {
    (0..3)
        .flat_map(|axis| {
            [1.0, -1.0].map(|sign| {
                let mut n = DVector::zeros(3);
                n[axis] = sign;
                LinearConstraint {
                    normal: n,
                    offset: -bound,
                }
            })
        })
        .collect()
}

/// Solves min ‖a − a_nominal‖² over the barrier constraints and the box
/// ‖a‖∞ ≤ `accel_bound`. Rotor commands are filled in by the caller (see
/// [`filter_control`]); here they are left at zero.
pub fn solve_safety_qp(
    nominal_acceleration: &Vector3<f64>,
    constraints: &ConstraintSet,
    accel_bound: f64,
) -> SafeControlResult {
    let mut lin: Vec<LinearConstraint> = constraints
        .constraints
        .iter()
        .map(|c| LinearConstraint {
            normal: DVector::from_column_slice(c.normal.as_slice()),
            offset: c.offset,
        })
        .collect();
    lin.extend(box_constraints(accel_bound));
    let x0 = DVector::from_column_slice(nominal_acceleration.as_slice());
    let sol = project(&x0, &lin);
    let a = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
    SafeControlResult {
        safe_acceleration: a,
        safe_thrusts: ControlInput::uniform(0.0),
        filter_active: (a - nominal_acceleration).norm() > 1e-9,
        feasible: sol.feasible,
        margins: constraints.margins(),
    }
}

/// Rotor commands realizing a desired world-frame acceleration from the
/// current attitude: collective thrust along body z and a proportional
/// tilt correction about body x/y, with zero yaw torque.
pub fn acceleration_to_thrusts(
    a_safe: &Vector3<f64>,
    rotation: &Matrix3<f64>,
    params: &QuadrotorParams,
    safety: &SafetyParams,
) -> ControlInput {
    let force = (a_safe - gravity()) * params.mass;
    let body_z = rotation.column(2).into_owned();
    let collective = force.dot(&body_z).max(1e-3 * params.mass * crate::dynamics::GRAVITY);
    let desired_z = if force.norm() > 1e-9 {
        force.normalize()
    } else {
        body_z
    };
    // rotation needed to bring body z onto the desired direction, in body frame
    let err_world = body_z.cross(&desired_z);
    let err_body = rotation.transpose() * err_world;
    let torque = Vector3::new(err_body.x, err_body.y, 0.0) * safety.attitude_gain;
    let wrench = Vector4::new(collective, torque.x, torque.y, torque.z);
    let inv = params
        .mixer()
        .try_inverse()
        .expect("X-frame mixer is invertible for positive arm and torque coefficient");
    let f = inv * wrench / params.max_rotor_thrust;
    ControlInput::new([f[0], f[1], f[2], f[3]])
}

/// World-frame acceleration the given rotor commands would produce,
/// ignoring drag.
pub fn nominal_acceleration(u: &ControlInput, rotation: &Matrix3<f64>, params: &QuadrotorParams) -> Vector3<f64> {
    let (thrust, _) = thrust_map(u, params);
    gravity() + rotation * Vector3::new(0.0, 0.0, thrust) / params.mass
}

/// Full filter for one agent: nominal acceleration from the policy's rotor
/// commands, barrier QP, and the rotor commands the filter would fly.
/// When the filter is inactive the policy's own commands pass through.
pub fn filter_control(
    state: &QuadrotorState,
    u_policy: &ControlInput,
    constraints: &ConstraintSet,
    params: &QuadrotorParams,
    safety: &SafetyParams,
) -> SafeControlResult {
    let nominal = nominal_acceleration(u_policy, &state.rotation, params);
    let mut result = solve_safety_qp(&nominal, constraints, safety.accel_bound);
    result.safe_thrusts = if result.filter_active {
        acceleration_to_thrusts(&result.safe_acceleration, &state.rotation, params, safety)
    } else {
        *u_policy
    };
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(p: [f64; 3], v: [f64; 3]) -> QuadrotorState {
        let mut s = QuadrotorState::at_rest(Vector3::from(p));
        s.velocity = Vector3::from(v);
        s
    }

    fn unit_alpha() -> SafetyParams {
        SafetyParams {
            max_acceleration: 1.0,
            safety_distance: 0.3,
            ..SafetyParams::default()
        }
    }

    #[test]
    fn h_zero_at_safety_distance() {
        let p = SafetyParams::default();
        let a = at([0.0, 0.0, 1.0], [0.0; 3]);
        let b = at([p.safety_distance, 0.0, 1.0], [0.0; 3]);
        assert!(h_quadrotor(&a, &b, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn h_closing_pair_hand_value() {
        let p = unit_alpha();
        let a = at([0.0, 0.0, 1.0], [0.5, 0.0, 0.0]);
        let b = at([0.8, 0.0, 1.0], [-0.5, 0.0, 0.0]);
        let h = h_quadrotor(&a, &b, &p).unwrap();
        assert!((h - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((h - 0.41421).abs() < 1e-5);
    }

    #[test]
    fn h_separating_pair_positive() {
        let p = SafetyParams::default();
        for d in [0.16, 0.5, 1.9] {
            let a = at([0.0, 0.0, 1.0], [-0.2, 0.1, 0.0]);
            let b = at([d, 0.0, 1.0], [0.3, 0.0, 0.0]);
            assert!(h_quadrotor(&a, &b, &p).unwrap() > 0.0);
        }
    }

    #[test]
    fn h_inside_margin_is_negative() {
        let p = SafetyParams::default();
        let a = at([0.0, 0.0, 1.0], [0.0; 3]);
        let b = at([0.1, 0.0, 1.0], [0.0; 3]);
        let h = h_quadrotor(&a, &b, &p).unwrap();
        assert!((h + (2.0 * 4.0 * 0.05f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn h_coincident_is_error() {
        let a = at([0.0, 0.0, 1.0], [0.0; 3]);
        assert!(h_quadrotor(&a, &a, &SafetyParams::default()).is_err());
        let on_axis = Cylinder::new(0.0, 0.0, 0.3);
        assert!(h_obstacle(&a, &on_axis, &SafetyParams::default()).is_err());
    }

    #[test]
    fn h_obstacle_hand_value() {
        let p = unit_alpha();
        let c = Cylinder::new(1.45, 0.0, 0.3);
        let s = at([0.0, 0.0, 1.0], [0.5, 0.0, 0.0]);
        let h = h_obstacle(&s, &c, &p).unwrap();
        assert!((h - (2f64.sqrt() - 0.5)).abs() < 1e-12);
        let hover = at([0.0, 0.0, 1.0], [0.0; 3]);
        let touching = Cylinder::new(p.safety_distance / 2.0 + 0.3, 0.0, 0.3);
        assert!(h_obstacle(&hover, &touching, &p).unwrap().abs() < 1e-12);
        let receding = at([0.0, 0.0, 1.0], [-0.5, 0.0, 0.0]);
        assert!(h_obstacle(&receding, &c, &p).unwrap() > 0.0);
    }

    #[test]
    fn no_constraints_inside_open_room() {
        let s = at([0.0, 0.0, 1.5], [0.3, 0.0, 0.0]);
        let set = build_constraints(&s, &[], &[], &Room::default(), &SafetyParams::default());
        assert!(set.is_empty());
    }

    #[test]
    fn head_on_neighbor_normal_points_away() {
        let p = SafetyParams::default();
        let s = at([0.0, 0.0, 1.5], [0.5, 0.0, 0.0]);
        let n = at([1.0, 0.0, 1.5], [-0.5, 0.0, 0.0]);
        let set = build_constraints(&s, &[n], &[], &Room::default(), &p);
        assert_eq!(set.len(), 1);
        let c = set.constraints[0];
        assert!((c.normal - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        // ḣ along the line: closing -1, gap 0.85, A = 4:
        // drift = 4 * (-1) / sqrt(2 * 4 * 0.85) ; offset = -(drift + h) / 2
        let a = 4.0;
        let h = (2.0 * a * 0.85f64).sqrt() - 1.0;
        let drift = -a / (2.0 * a * 0.85f64).sqrt();
        assert!((c.offset + 0.5 * (drift + h)).abs() < 1e-12);
    }

    #[test]
    fn ceiling_margin_gives_downward_normal() {
        let p = SafetyParams::default();
        let room = Room::default();
        let s = at([0.0, 0.0, room.max[2] - 0.1], [0.0; 3]);
        let set = build_constraints(&s, &[], &[], &room, &p);
        assert_eq!(set.len(), 1);
        assert_eq!(set.constraints[0].source, ConstraintSource::Boundary(5));
        assert!((set.constraints[0].normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn normals_are_unit() {
        let p = SafetyParams::default();
        let s = at([3.8, -3.9, 0.1], [0.4, -0.2, -0.3]);
        let others = [at([3.5, -3.5, 0.3], [0.0; 3]), at([3.9, -3.2, 0.1], [0.1, 0.0, 0.0])];
        let obstacles = [Cylinder::new(3.0, -3.0, 0.3)];
        let set = build_constraints(&s, &others, &obstacles, &Room::default(), &p);
        assert!(set.len() >= 5);
        for c in &set.constraints {
            assert!((c.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unconstrained_qp_passes_nominal() {
        let a = Vector3::new(0.3, -1.0, 2.0);
        let r = solve_safety_qp(&a, &ConstraintSet::default(), 5.0);
        assert!(r.feasible && !r.filter_active);
        assert_eq!(r.safe_acceleration, a);
    }

    #[test]
    fn opposing_halfspaces_infeasible() {
        let set = ConstraintSet {
            constraints: vec![
                Constraint {
                    normal: Vector3::x(),
                    offset: 1.0,
                    h: 0.0,
                    source: ConstraintSource::Neighbor(0),
                },
                Constraint {
                    normal: -Vector3::x(),
                    offset: 1.0,
                    h: 0.0,
                    source: ConstraintSource::Neighbor(1),
                },
            ],
        };
        let r = solve_safety_qp(&Vector3::zeros(), &set, 5.0);
        assert!(!r.feasible);
    }

    #[test]
    fn zero_accel_gives_hover() {
        let p = QuadrotorParams::default();
        let u = acceleration_to_thrusts(&Vector3::zeros(), &Matrix3::identity(), &p, &SafetyParams::default());
        for v in u.normalized_thrusts {
            assert!((v - p.hover_command()).abs() < 1e-12);
        }
    }

    #[test]
    fn upward_accel_raises_uniformly() {
        let p = QuadrotorParams::default();
        let u = acceleration_to_thrusts(&Vector3::new(0.0, 0.0, 2.0), &Matrix3::identity(), &p, &SafetyParams::default());
        let expected = p.hover_command() + 2.0 * p.mass / (4.0 * p.max_rotor_thrust);
        for v in u.normalized_thrusts {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_accel_tilts_toward_demand() {
        let p = QuadrotorParams::default();
        let s = SafetyParams::default();
        let u = acceleration_to_thrusts(&Vector3::new(1.0, 0.0, 0.0), &Matrix3::identity(), &p, &s);
        let (_, tau) = thrust_map(&u, &p);
        // pitching toward +x needs positive torque about body y
        assert!(tau.y > 0.0);
        assert!(tau.x.abs() < 1e-15);
        assert!(tau.z.abs() < 1e-12);
        // rear rotors (1, 2) push harder than the front ones (0, 3)
        let t = u.normalized_thrusts;
        assert!(t[1] > t[0] && t[2] > t[3]);
    }

    #[test]
    fn filter_passes_policy_when_inactive() {
        let p = QuadrotorParams::default();
        let sp = SafetyParams::default();
        let s = at([0.0, 0.0, 1.5], [0.0; 3]);
        let u = ControlInput::new([0.52, 0.5, 0.49, 0.5]);
        let r = filter_control(&s, &u, &ConstraintSet::default(), &p, &sp);
        assert!(!r.filter_active);
        assert_eq!(r.safe_thrusts, u);
    }

    #[test]
    fn monotone_in_distance() {
        let p = SafetyParams::default();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..200 {
            let d = 0.01 * k as f64;
            let a = at([0.0, 0.0, 1.0], [0.2, 0.1, 0.0]);
            let b = at([d, 0.0, 1.0], [-0.1, 0.0, 0.0]);
            let h = h_quadrotor(&a, &b, &p).unwrap();
            assert!(h > prev);
            prev = h;
        }
    }
}
