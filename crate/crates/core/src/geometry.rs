//! Static world geometry shared by the sensing, safety and scenario code:
//! an axis-aligned room and floor-to-ceiling cylinders.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Axis-aligned room. Obstacles span the full height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Room {
    /// Room centered on the origin in x/y with the floor at z = 0.
    pub fn centered(extent_x: f64, extent_y: f64, height: f64) -> Self {
        Room {
            min: [-extent_x / 2.0, -extent_y / 2.0, 0.0],
            max: [extent_x / 2.0, extent_y / 2.0, height],
        }
    }

    pub fn extents(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extents();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    /// Distance to the nearest of the four vertical walls (negative outside).
    pub fn horizontal_wall_distance(&self, p: &Vector2<f64>) -> f64 {
        let dx = (p.x - self.min[0]).min(self.max[0] - p.x);
        let dy = (p.y - self.min[1]).min(self.max[1] - p.y);
        dx.min(dy)
    }
}

impl Default for Room {
    fn default() -> Self {
        Room::centered(8.0, 8.0, 3.0)
    }
}

/// Vertical cylinder extending from floor to ceiling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Cylinder {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Cylinder {
            center: [x, y],
            radius,
        }
    }

    pub fn center_xy(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }

    /// Horizontal distance from `p` to the cylinder axis.
    pub fn axis_distance(&self, p: &Vector3<f64>) -> f64 {
        (p.xy() - self.center_xy()).norm()
    }

    /// Distance from a horizontal point to the surface, zero inside.
    pub fn surface_distance_xy(&self, p: &Vector2<f64>) -> f64 {
        ((p - self.center_xy()).norm() - self.radius).max(0.0)
    }

    /// Smallest distance between the surfaces of two cylinders.
    pub fn surface_gap(&self, other: &Cylinder) -> f64 {
        (self.center_xy() - other.center_xy()).norm() - self.radius - other.radius
    }
}

/// Skew-symmetric cross-product matrix.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Yaw angle of a rotation matrix (z-y-x convention).
pub fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Rotation about the world z axis.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Orthonormality defect max(|RᵀR - I|) together with |det R - 1|.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    e.amax().max((r.determinant() - 1.0).abs())
}

/// Projects a near-orthonormal matrix back onto SO(3) with Newton-Schulz
/// polar iterations.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut q = *r;
    for _ in 0..4 {
        let err = q.transpose() * q - Matrix3::identity();
        if err.amax() < 1e-15 {
            break;
        }
        q = q * (Matrix3::identity() * 1.5 - (q.transpose() * q) * 0.5);
    }
    q
}

/// Exponential map of a rotation vector (Rodrigues formula).
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let r = exp_so3(&Vector3::new(0.3, -0.2, 1.1)) + Matrix3::repeat(1e-4);
        assert!(rotation_defect(&r) > 1e-5);
        assert!(rotation_defect(&orthonormalize(&r)) < 1e-12);
    }

    #[test]
    fn yaw_round_trip() {
        for k in -6..=6 {
            let y = 0.5 * k as f64;
            assert!((wrap_angle(yaw_of(&yaw_rotation(y)) - y)).abs() < 1e-12);
        }
    }
}
