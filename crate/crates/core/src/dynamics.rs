//! Rigid-body quadrotor model: X-configuration thrust mixing, linear drag,
//! RK4 integration, domain randomization and the randomized collision
//! response used during training.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{orthonormalize, skew};

pub const GRAVITY: f64 = 9.81;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Full rigid-body state. Angular velocity is expressed in the body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl QuadrotorState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        QuadrotorState {
            position,
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// Flat layout: position, velocity, rotation (row-major), angular velocity.
    pub fn to_array(&self) -> [f64; 18] {
        let mut a = [0.0; 18];
        a[0..3].copy_from_slice(self.position.as_slice());
        a[3..6].copy_from_slice(self.velocity.as_slice());
        for r in 0..3 {
            for c in 0..3 {
                a[6 + 3 * r + c] = self.rotation[(r, c)];
            }
        }
        a[15..18].copy_from_slice(self.angular_velocity.as_slice());
        a
    }

    pub fn from_array(a: &[f64; 18]) -> Self {
        QuadrotorState {
            position: Vector3::new(a[0], a[1], a[2]),
            velocity: Vector3::new(a[3], a[4], a[5]),
            rotation: Matrix3::new(a[6], a[7], a[8], a[9], a[10], a[11], a[12], a[13], a[14]),
            angular_velocity: Vector3::new(a[15], a[16], a[17]),
        }
    }
}

/// Physical parameters of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub mass: f64,
    /// Diagonal of the body inertia tensor.
    pub inertia: [f64; 3],
    pub arm_length: f64,
    pub max_rotor_thrust: f64,
    /// Yaw reaction torque per newton of rotor thrust.
    pub torque_coefficient: f64,
    pub linear_drag_coefficient: [f64; 3],
}

impl Default for QuadrotorParams {
    /// Crazyflie 2.x class vehicle. Rotor limit is set to a 2:1
    /// thrust-to-weight ratio so that hover sits at half throttle.
    fn default() -> Self {
        let mass = 0.033;
        QuadrotorParams {
            mass,
            inertia: [1.395e-5, 1.436e-5, 2.173e-5],
            arm_length: 0.046,
            max_rotor_thrust: mass * GRAVITY / 2.0,
            torque_coefficient: 0.005964,
            linear_drag_coefficient: [0.005, 0.005, 0.005],
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParams("mass must be positive".into()));
        }
        if self.inertia.iter().any(|i| !(*i > 0.0)) {
            return Err(Error::InvalidParams("inertia entries must be positive".into()));
        }
        if !(self.arm_length > 0.0) {
            return Err(Error::InvalidParams("arm length must be positive".into()));
        }
        if !self.hover_feasible() {
            return Err(Error::InvalidParams(format!(
                "4 x max_rotor_thrust = {} N cannot lift m*g = {} N",
                4.0 * self.max_rotor_thrust,
                self.mass * GRAVITY
            )));
        }
        Ok(())
    }

    pub fn hover_feasible(&self) -> bool {
        4.0 * self.max_rotor_thrust > self.mass * GRAVITY
    }

    /// Normalized per-rotor command that exactly cancels gravity.
    pub fn hover_command(&self) -> f64 {
        self.mass * GRAVITY / (4.0 * self.max_rotor_thrust)
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    /// Maps rotor forces [f0..f3] to [collective, τx, τy, τz].
    ///
    /// Rotors sit at ±45° on an X frame: 0 front-right, 1 rear-right,
    /// 2 rear-left, 3 front-left. Rotors 0 and 2 spin clockwise and push
    /// a negative yaw reaction; 1 and 3 the opposite.
    pub fn mixer(&self) -> Matrix4<f64> {
        let d = self.arm_length / 2f64.sqrt();
        let k = self.torque_coefficient;
        let xs = [d, -d, -d, d];
        let ys = [-d, -d, d, d];
        let spin = [-1.0, 1.0, -1.0, 1.0];
        let mut m = Matrix4::zeros();
        for i in 0..4 {
            m[(0, i)] = 1.0;
            m[(1, i)] = ys[i];
            m[(2, i)] = -xs[i];
            m[(3, i)] = spin[i] * k;
        }
        m
    }
}

/// Normalized rotor commands in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub normalized_thrusts: [f64; 4],
}

impl ControlInput {
    pub fn new(u: [f64; 4]) -> Self {
        ControlInput {
            normalized_thrusts: u.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }),
        }
    }

    pub fn uniform(v: f64) -> Self {
        ControlInput::new([v; 4])
    }

    pub fn hover(params: &QuadrotorParams) -> Self {
        ControlInput::uniform(params.hover_command())
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from(self.normalized_thrusts)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

/// Collective body-z force and body torque produced by the rotor commands.
pub fn thrust_map(u: &ControlInput, params: &QuadrotorParams) -> (f64, Vector3<f64>) {
    let f = ControlInput::new(u.normalized_thrusts).as_vector() * params.max_rotor_thrust;
    let w = params.mixer() * f;
    (w[0], Vector3::new(w[1], w[2], w[3]))
}

/// Time derivative of the flat 18-dimensional state under constant input.
pub fn vector_field(s: &[f64; 18], u: &ControlInput, params: &QuadrotorParams) -> [f64; 18] {
    let state = QuadrotorState::from_array(s);
    let (thrust, torque) = thrust_map(u, params);
    let drag = Vector3::from(params.linear_drag_coefficient).component_mul(&state.velocity);
    let accel = gravity() + (state.rotation * Vector3::new(0.0, 0.0, thrust) - drag) / params.mass;
    let inertia = Vector3::from(params.inertia);
    let w = state.angular_velocity;
    let iw = inertia.component_mul(&w);
    let w_dot = (torque - w.cross(&iw)).component_div(&inertia);
    let r_dot = state.rotation * skew(&w);

    let mut d = [0.0; 18];
    d[0..3].copy_from_slice(state.velocity.as_slice());
    d[3..6].copy_from_slice(accel.as_slice());
    for r in 0..3 {
        for c in 0..3 {
            d[6 + 3 * r + c] = r_dot[(r, c)];
        }
    }
    d[15..18].copy_from_slice(w_dot.as_slice());
    d
}

fn axpy(a: &[f64; 18], k: f64, b: &[f64; 18]) -> [f64; 18] {
    let mut out = *a;
    for i in 0..18 {
        out[i] += k * b[i];
    }
    out
}

/// Advances one step with classic RK4 and projects the attitude back onto
/// SO(3).
pub fn step(
    state: &QuadrotorState,
    u: &ControlInput,
    params: &QuadrotorParams,
    dt: f64,
) -> Result<QuadrotorState> {
    debug_assert!(dt > 0.0);
    let y = state.to_array();
    let k1 = vector_field(&y, u, params);
    let k2 = vector_field(&axpy(&y, dt / 2.0, &k1), u, params);
    let k3 = vector_field(&axpy(&y, dt / 2.0, &k2), u, params);
    let k4 = vector_field(&axpy(&y, dt, &k3), u, params);
    let mut out = y;
    for i in 0..18 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut next = QuadrotorState::from_array(&out);
    next.rotation = orthonormalize(&next.rotation);
    if !next.is_finite() {
        return Err(Error::SimulationDiverged {
            state: Box::new(next),
        });
    }
    Ok(next)
}

/// Sampling ranges for the randomized collision response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionModel {
    /// Post-collision speed as a fraction of the pre-collision speed.
    pub speed_factor: [f64; 2],
    pub quad_spin: [f64; 2],
    pub obstacle_spin: [f64; 2],
    /// Standard deviation of the angular noise on the reflected direction.
    pub direction_noise_deg: f64,
}

impl Default for CollisionModel {
    fn default() -> Self {
        CollisionModel {
            speed_factor: [0.2, 0.8],
            quad_spin: [10.0 * PI, 20.0 * PI],
            obstacle_spin: [PI / 2.0, PI],
            direction_noise_deg: 10.0,
        }
    }
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Flips the component of `v` that points against `axis` (unit) so the
/// result moves away along the axis. Motion already along `axis` is kept.
pub fn reflect_about_axis(v: &Vector3<f64>, axis: &Vector3<f64>) -> Vector3<f64> {
    let along = v.dot(axis);
    if along < 0.0 {
        v - axis * (2.0 * along)
    } else {
        *v
    }
}

fn perturb_direction<R: Rng + ?Sized>(v: &Vector3<f64>, sigma_deg: f64, rng: &mut R) -> Vector3<f64> {
    let speed = v.norm();
    if speed < 1e-12 || sigma_deg <= 0.0 {
        return *v;
    }
    let dir = v / speed;
    // random axis orthogonal to the direction
    let mut axis = random_unit_vector(rng);
    axis -= dir * axis.dot(&dir);
    if axis.norm() < 1e-9 {
        return *v;
    }
    axis.normalize_mut();
    let angle = Normal::new(0.0, sigma_deg.to_radians())
        .expect("positive sigma")
        .sample(rng);
    crate::geometry::exp_so3(&(axis * angle)) * v
}

fn respond<R: Rng + ?Sized>(
    state: &QuadrotorState,
    axis: &Vector3<f64>,
    spin: [f64; 2],
    model: &CollisionModel,
    rng: &mut R,
) -> QuadrotorState {
    let reflected = reflect_about_axis(&state.velocity, axis);
    let noisy = perturb_direction(&reflected, model.direction_noise_deg, rng);
    let factor = rng.gen_range(model.speed_factor[0]..=model.speed_factor[1]);
    let mut out = *state;
    out.velocity = noisy * factor;
    let magnitude = rng.gen_range(spin[0]..=spin[1]);
    out.angular_velocity = random_unit_vector(rng) * magnitude;
    out
}

/// Randomized quadrotor-quadrotor collision response. Speed factors are
/// drawn independently for the two vehicles.
pub fn apply_quad_quad_collision<R: Rng + ?Sized>(
    state_i: &QuadrotorState,
    state_j: &QuadrotorState,
    model: &CollisionModel,
    rng: &mut R,
) -> (QuadrotorState, QuadrotorState) {
    let delta = state_i.position - state_j.position;
    let axis = if delta.norm() < 1e-9 {
        random_unit_vector(rng)
    } else {
        delta.normalize()
    };
    let a = respond(state_i, &axis, model.quad_spin, model, rng);
    let b = respond(state_j, &(-axis), model.quad_spin, model, rng);
    (a, b)
}

/// Randomized response against a vertical cylinder: only the horizontal
/// radial component is reflected.
pub fn apply_quad_obstacle_collision<R: Rng + ?Sized>(
    state: &QuadrotorState,
    obstacle_center: &Vector3<f64>,
    model: &CollisionModel,
    rng: &mut R,
) -> QuadrotorState {
    let mut delta = state.position - obstacle_center;
    delta.z = 0.0;
    let axis = if delta.norm() < 1e-9 {
        let mut a = random_unit_vector(rng);
        a.z = 0.0;
        if a.norm() < 1e-9 {
            Vector3::x()
        } else {
            a.normalize()
        }
    } else {
        delta.normalize()
    };
    respond(state, &axis, model.obstacle_spin, model, rng)
}

/// Scales mass, inertia, rotor limit and drag by independent factors in
/// [1 - spread, 1 + spread], resampling until hover stays feasible.
pub fn domain_randomize<R: Rng + ?Sized>(
    params: &QuadrotorParams,
    rng: &mut R,
    spread: f64,
) -> Result<QuadrotorParams> {
    if !(0.0..1.0).contains(&spread) {
        return Err(Error::InvalidParams(format!("spread {spread} outside [0, 1)")));
    }
    if spread == 0.0 {
        return Ok(*params);
    }
    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        let mut scale = || rng.gen_range(1.0 - spread..=1.0 + spread);
        let mut p = *params;
        p.mass *= scale();
        for i in 0..3 {
            p.inertia[i] *= scale();
        }
        p.max_rotor_thrust *= scale();
        for i in 0..3 {
            p.linear_drag_coefficient[i] *= scale();
        }
        if p.hover_feasible() {
            return Ok(p);
        }
    }
    Err(Error::InvalidParams(format!(
        "no hover-feasible sample after {MAX_ATTEMPTS} attempts at spread {spread}"
    )))
}
