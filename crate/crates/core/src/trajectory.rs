//! Minimum-snap piecewise polynomials through waypoints.
//!
//! Each segment is a degree-7 polynomial in normalized time τ = t / T on
//! [0, 1]. The coefficients minimize ∫‖p⁗(t)‖² dt subject to waypoint
//! interpolation, rest-to-rest endpoints (velocity, acceleration and jerk
//! zero) and C⁴ continuity at interior knots. The problem is solved per axis
//! through its KKT system; x, y, z and yaw share one factorization.
//!
//! Obstacles are deliberately ignored: the output depends only on the
//! waypoints and the desired speed.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, yaw_rotation};

pub const DEGREE: usize = 7;
const NCOEF: usize = DEGREE + 1;
const AXES: usize = 4;
/// Duration assigned to a trajectory whose waypoints all coincide.
pub const STATIONARY_DURATION: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl Waypoint {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Waypoint {
            position: position.into(),
            yaw,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

/// One polynomial segment; `coeffs[axis][i]` multiplies τⁱ, axes x, y, z, yaw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub coeffs: [[f64; NCOEF]; AXES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    pub segments: Vec<Segment>,
    /// Whether goal angular velocity carries the yaw rate or is zero.
    #[serde(default = "default_true")]
    pub goal_yaw_rate: bool,
}

fn default_true() -> bool {
    true
}

/// The 13-dimensional tracking target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub orientation: [f64; 4],
    pub angular_velocity: [f64; 3],
}

impl GoalState {
    pub fn hover_at(position: Vector3<f64>, yaw: f64) -> Self {
        GoalState {
            position: position.into(),
            velocity: [0.0; 3],
            orientation: [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()],
            angular_velocity: [0.0; 3],
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from(self.velocity)
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        Vector3::from(self.angular_velocity)
    }

    pub fn yaw(&self) -> f64 {
        let [w, x, y, z] = self.orientation;
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.orientation;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn as_array(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[0..3].copy_from_slice(&self.position);
        out[3..6].copy_from_slice(&self.velocity);
        out[6..10].copy_from_slice(&self.orientation);
        out[10..13].copy_from_slice(&self.angular_velocity);
        out
    }
}

/// i! / (i - r)!, zero when r > i.
fn falling(i: usize, r: usize) -> f64 {
    if r > i {
        return 0.0;
    }
    ((i - r + 1)..=i).map(|k| k as f64).product()
}

/// Gram matrix of the 4th derivative on [0, 1] in normalized time.
fn snap_gram() -> [[f64; NCOEF]; NCOEF] {
    let mut q = [[0.0; NCOEF]; NCOEF];
    for i in 4..NCOEF {
        for j in 4..NCOEF {
            q[i][j] = falling(i, 4) * falling(j, 4) / (i + j - 7) as f64;
        }
    }
    q
}

fn eval_poly(c: &[f64; NCOEF], tau: f64, order: usize, duration: f64) -> f64 {
    let mut acc = 0.0;
    for i in (order..NCOEF).rev() {
        acc = acc * tau + falling(i, order) * c[i];
    }
    acc / duration.powi(order as i32)
}

/// Plans the minimum-snap trajectory through `waypoints`, allocating each
/// segment a duration of length / `desired_velocity`.
pub fn plan_min_snap(waypoints: &[Waypoint], desired_velocity: f64) -> Result<PiecewisePolynomial> {
    if waypoints.len() < 2 {
        return Err(Error::Planning("at least two waypoints are required".into()));
    }
    if !(desired_velocity > 0.0) || !desired_velocity.is_finite() {
        return Err(Error::Planning(format!("desired velocity {desired_velocity} must be positive")));
    }
    if waypoints
        .iter()
        .any(|w| w.position.iter().any(|v| !v.is_finite()) || !w.yaw.is_finite())
    {
        return Err(Error::Planning("waypoints must be finite".into()));
    }

    // unwrap yaw so consecutive targets never jump by more than pi
    let mut yaws = Vec::with_capacity(waypoints.len());
    yaws.push(waypoints[0].yaw);
    for w in &waypoints[1..] {
        let prev = *yaws.last().unwrap();
        yaws.push(prev + wrap_angle(w.yaw - prev));
    }

    let lengths: Vec<f64> = waypoints
        .windows(2)
        .map(|p| (p[1].position() - p[0].position()).norm())
        .collect();

    if lengths.iter().all(|l| *l == 0.0) {
        let p = waypoints[0].position;
        let mut coeffs = [[0.0; NCOEF]; AXES];
        for k in 0..3 {
            coeffs[k][0] = p[k];
        }
        coeffs[3][0] = yaws[0];
        return Ok(PiecewisePolynomial {
            segments: vec![Segment {
                duration: STATIONARY_DURATION,
                coeffs,
            }],
            goal_yaw_rate: true,
        });
    }
    if let Some(k) = lengths.iter().position(|l| *l < 1e-9) {
        return Err(Error::Planning(format!(
            "waypoints {k} and {} coincide: zero-duration segment makes the constraint system singular",
            k + 1
        )));
    }

    let durations: Vec<f64> = lengths.iter().map(|l| l / desired_velocity).collect();
    let m = durations.len();
    let nvar = NCOEF * m;

    // equality constraints A c = b, one right-hand side per axis
    let mut rows: Vec<(Vec<(usize, f64)>, [f64; AXES])> = Vec::new();
    let target = |i: usize| -> [f64; AXES] {
        let p = waypoints[i].position;
        [p[0], p[1], p[2], yaws[i]]
    };
    for k in 0..m {
        rows.push((vec![(NCOEF * k, 1.0)], target(k)));
        rows.push(((0..NCOEF).map(|i| (NCOEF * k + i, 1.0)).collect(), target(k + 1)));
    }
    for r in 1..=3 {
        let t0 = durations[0];
        rows.push((vec![(r, falling(r, r) / t0.powi(r as i32))], [0.0; AXES]));
        let tl = durations[m - 1];
        rows.push((
            (r..NCOEF)
                .map(|i| (NCOEF * (m - 1) + i, falling(i, r) / tl.powi(r as i32)))
                .collect(),
            [0.0; AXES],
        ));
    }
    for k in 0..m.saturating_sub(1) {
        for r in 1..=4 {
            let ta = durations[k];
            let tb = durations[k + 1];
            let mut row: Vec<(usize, f64)> = (r..NCOEF)
                .map(|i| (NCOEF * k + i, falling(i, r) / ta.powi(r as i32)))
                .collect();
            row.push((NCOEF * (k + 1) + r, -falling(r, r) / tb.powi(r as i32)));
            rows.push((row, [0.0; AXES]));
        }
    }

    let ncon = rows.len();
    let n = nvar + ncon;
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    let q = snap_gram();
    for (k, t) in durations.iter().enumerate() {
        let w = 2.0 / t.powi(7);
        for i in 0..NCOEF {
            for j in 0..NCOEF {
                kkt[(NCOEF * k + i, NCOEF * k + j)] = w * q[i][j];
            }
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, AXES);
    for (ci, (row, b)) in rows.iter().enumerate() {
        for &(j, v) in row {
            kkt[(nvar + ci, j)] = v;
            kkt[(j, nvar + ci)] = v;
        }
        for a in 0..AXES {
            rhs[(nvar + ci, a)] = b[a];
        }
    }

    let lu = kkt.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Planning("singular boundary-condition system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Planning("non-finite coefficients".into()));
    }

    let segments = durations
        .iter()
        .enumerate()
        .map(|(k, &duration)| {
            let mut coeffs = [[0.0; NCOEF]; AXES];
            for (a, axis) in coeffs.iter_mut().enumerate() {
                for (i, c) in axis.iter_mut().enumerate() {
                    *c = sol[(NCOEF * k + i, a)];
                }
            }
            Segment { duration, coeffs }
        })
        .collect();
    Ok(PiecewisePolynomial {
        segments,
        goal_yaw_rate: true,
    })
}

impl PiecewisePolynomial {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn knot_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = vec![0.0];
        for s in &self.segments {
            t += s.duration;
            out.push(t);
        }
        out
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.max(0.0);
        let mut start = 0.0;
        for (k, s) in self.segments.iter().enumerate() {
            if t <= start + s.duration || k + 1 == self.segments.len() {
                let tau = ((t - start) / s.duration).clamp(0.0, 1.0);
                return (k, tau);
            }
            start += s.duration;
        }
        unreachable!("trajectory has at least one segment")
    }

    /// `order`-th time derivative of (x, y, z, yaw); t is clamped to the span.
    pub fn derivative(&self, t: f64, order: usize) -> [f64; AXES] {
        let (k, tau) = self.locate(t);
        let seg = &self.segments[k];
        let mut out = [0.0; AXES];
        for (a, o) in out.iter_mut().enumerate() {
            *o = eval_poly(&seg.coeffs[a], tau, order, seg.duration);
        }
        out
    }

    /// Goal state at time `t`; beyond the end the final state is held.
    pub fn evaluate(&self, t: f64) -> GoalState {
        let clamped = t.clamp(0.0, self.total_duration());
        let p = self.derivative(clamped, 0);
        let (v, yaw_rate) = if t > self.total_duration() {
            ([0.0; AXES], 0.0)
        } else {
            let d = self.derivative(clamped, 1);
            (d, d[3])
        };
        let yaw = p[3];
        GoalState {
            position: [p[0], p[1], p[2]],
            velocity: [v[0], v[1], v[2]],
            orientation: [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()],
            angular_velocity: [0.0, 0.0, if self.goal_yaw_rate { yaw_rate } else { 0.0 }],
        }
    }

    pub fn goal_rotation(&self, t: f64) -> Matrix3<f64> {
        yaw_rotation(self.derivative(t.clamp(0.0, self.total_duration()), 0)[3])
    }

    /// ∫‖snap‖² dt over the whole trajectory for the position axes.
    pub fn snap_cost(&self) -> f64 {
        let q = snap_gram();
        self.segments
            .iter()
            .map(|s| {
                let mut c = 0.0;
                for a in 0..3 {
                    for i in 0..NCOEF {
                        for j in 0..NCOEF {
                            c += s.coeffs[a][i] * q[i][j] * s.coeffs[a][j];
                        }
                    }
                }
                c / s.duration.powi(7)
            })
            .sum()
    }

    /// Same path traversed with every duration multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> PiecewisePolynomial {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.duration *= factor;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Coefficient vector of one axis flattened across segments (test support).
pub fn axis_coefficients(traj: &PiecewisePolynomial, axis: usize) -> DVector<f64> {
    DVector::from_iterator(
        traj.segments.len() * NCOEF,
        traj.segments.iter().flat_map(|s| s.coeffs[axis].iter().copied()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64, y: f64, z: f64) -> Waypoint {
        Waypoint::new(Vector3::new(x, y, z), 0.0)
    }

    /// Oracle: the 8x8 rest-to-rest boundary-condition system, solved
    /// directly in physical time without the KKT machinery.
    fn rest_to_rest_oracle(t_end: f64, x0: f64, x1: f64) -> [f64; 8] {
        let mut a = DMatrix::<f64>::zeros(8, 8);
        let mut b = DVector::<f64>::zeros(8);
        for r in 0..4 {
            // derivative r at t = 0
            a[(r, r)] = (1..=r).map(|k| k as f64).product::<f64>();
            // derivative r at t = T
            for i in r..8 {
                let f: f64 = ((i - r + 1)..=i).map(|k| k as f64).product();
                a[(4 + r, i)] = f * t_end.powi((i - r) as i32);
            }
        }
        b[0] = x0;
        b[4] = x1;
        let c = a.lu().solve(&b).unwrap();
        let mut out = [0.0; 8];
        out.copy_from_slice(c.as_slice());
        out
    }

    #[test]
    fn unit_segment_matches_septic() {
        let traj = plan_min_snap(&[wp(0.0, 0.0, 1.0), wp(1.0, 0.0, 1.0)], 0.5).unwrap();
        assert!((traj.total_duration() - 2.0).abs() < 1e-12);
        let oracle = rest_to_rest_oracle(2.0, 0.0, 1.0);
        for k in 0..=40 {
            let t = 2.0 * k as f64 / 40.0;
            let tau: f64 = t / 2.0;
            let septic = 35.0 * tau.powi(4) - 84.0 * tau.powi(5) + 70.0 * tau.powi(6) - 20.0 * tau.powi(7);
            let from_oracle: f64 = oracle.iter().enumerate().map(|(i, c)| c * t.powi(i as i32)).sum();
            let x = traj.evaluate(t).position[0];
            assert!((x - septic).abs() < 1e-6);
            assert!((x - from_oracle).abs() < 1e-6);
        }
        assert!((traj.evaluate(1.0).position[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_give_constant() {
        let traj = plan_min_snap(&[wp(1.0, 2.0, 3.0), wp(1.0, 2.0, 3.0)], 0.5).unwrap();
        for k in 0..10 {
            let g = traj.evaluate(0.1 * k as f64);
            assert_eq!(g.position, [1.0, 2.0, 3.0]);
            assert_eq!(g.velocity, [0.0; 3]);
        }
        for order in 1..5 {
            assert_eq!(traj.derivative(0.3, order), [0.0; 4]);
        }
    }

    #[test]
    fn duplicate_interior_waypoint_is_rejected() {
        let r = plan_min_snap(&[wp(0.0, 0.0, 1.0), wp(0.0, 0.0, 1.0), wp(1.0, 0.0, 1.0)], 0.5);
        assert!(matches!(r, Err(Error::Planning(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(plan_min_snap(&[wp(0.0, 0.0, 0.0)], 0.5).is_err());
        assert!(plan_min_snap(&[wp(0.0, 0.0, 0.0), wp(1.0, 0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn boundary_conditions() {
        let wps = [wp(0.0, 0.0, 1.0), wp(2.0, 1.0, 1.5), wp(3.0, -1.0, 1.0), wp(5.0, 0.0, 0.5)];
        let traj = plan_min_snap(&wps, 0.7).unwrap();
        for (w, t) in wps.iter().zip(traj.knot_times()) {
            let p = traj.evaluate(t).position();
            assert!((p - w.position()).norm() <= 1e-9);
        }
        let end = traj.total_duration();
        for order in 1..=3 {
            for t in [0.0, end] {
                let d = traj.derivative(t, order);
                assert!(d[..3].iter().all(|v| v.abs() <= 1e-9), "order {order} at {t}: {d:?}");
            }
        }
    }

    #[test]
    fn c4_continuity_at_knots() {
        let wps = [wp(0.0, 0.0, 1.0), wp(1.0, 1.0, 1.0), wp(2.5, 0.5, 1.2)];
        let traj = plan_min_snap(&wps, 0.5).unwrap();
        let s0 = &traj.segments[0];
        let s1 = &traj.segments[1];
        for order in 0..=4 {
            for a in 0..3 {
                let left = eval_poly(&s0.coeffs[a], 1.0, order, s0.duration);
                let right = eval_poly(&s1.coeffs[a], 0.0, order, s1.duration);
                assert!((left - right).abs() <= 1e-8 * (1.0 + left.abs()));
            }
        }
    }

    #[test]
    fn end_state_is_held() {
        let traj = plan_min_snap(&[wp(0.0, 0.0, 1.0), wp(1.0, 0.0, 1.0)], 0.5).unwrap();
        let g = traj.evaluate(10.0);
        assert_eq!(g.position, [1.0, 0.0, 1.0]);
        assert_eq!(g.velocity, [0.0; 3]);
        let g0 = traj.evaluate(0.0);
        assert_eq!(g0.position, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_yaw_and_unit_quaternion() {
        let heading = 0.7;
        let wps = [
            Waypoint::new(Vector3::new(0.0, 0.0, 1.0), heading),
            Waypoint::new(Vector3::new(3.0, 2.0, 1.0), heading),
        ];
        let traj = plan_min_snap(&wps, 0.5).unwrap();
        for k in 0..20 {
            let g = traj.evaluate(k as f64 * 0.4);
            let q = g.orientation;
            let norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert!((g.yaw() - heading).abs() < 1e-9);
            assert!(g.angular_velocity[2].abs() < 1e-9);
        }
    }

    #[test]
    fn time_scaling_halves_velocity() {
        let wps = [wp(0.0, 0.0, 1.0), wp(1.0, 1.0, 1.0), wp(2.5, 0.5, 1.2)];
        let traj = plan_min_snap(&wps, 0.5).unwrap();
        let slow = traj.time_scaled(2.0);
        let total = traj.total_duration();
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            let v1 = traj.evaluate(s * total).velocity();
            let v2 = slow.evaluate(s * 2.0 * total).velocity();
            assert!((v1 * 0.5 - v2).norm() <= 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let traj = plan_min_snap(&[wp(0.0, 0.0, 1.0), wp(1.0, 2.0, 1.0)], 0.5).unwrap();
        let back = PiecewisePolynomial::from_json(&traj.to_json().unwrap()).unwrap();
        assert_eq!(traj, back);
    }
}
