//! SE(2) rigid transforms, the exponential/logarithm maps and the body-frame
//! perturbation used by every Jacobian in the crate.
//!
//! Tangent vectors are ordered `[dx, dy, dtheta]` whenever they are handled as
//! `Vector3`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Below this rotation magnitude the closed-form `V(theta)` terms switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rigid transform in the plane. For trajectory poses this is sensor-to-world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

/// Element of the SE(2) Lie algebra.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2 {
    pub dtheta: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(theta={:.6}, x={:.6}, y={:.6})", self.theta, self.x, self.y)
    }
}

impl Pose2 {
    pub fn new(theta: f64, x: f64, y: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            x,
            y,
        }
    }

    pub const fn identity() -> Self {
        Self {
            theta: 0.0,
            x: 0.0,
            y: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation_matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// 3x3 homogeneous matrix.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0)
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.theta + other.theta,
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -self.theta,
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
        )
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, pt: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(
            c * pt.x - s * pt.y + self.x,
            s * pt.x + c * pt.y + self.y,
        )
    }

    /// Maps a world point into this pose's local frame.
    pub fn inverse_transform_point(&self, pt: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        let dx = pt.x - self.x;
        let dy = pt.y - self.y;
        Vector2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Right (body-frame) perturbation `self * exp(xi)`.
    pub fn apply_perturbation(&self, xi: &Twist2) -> Pose2 {
        self.compose(&xi.exp())
    }

    pub fn log(&self) -> Twist2 {
        Twist2::log(self)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// `(sin t / t, (1 - cos t) / t)`, the entries of the SE(2) left Jacobian.
fn v_coefficients(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        (1.0 - theta * theta / 6.0, theta / 2.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta)
    }
}

impl Twist2 {
    pub fn new(dtheta: f64, dx: f64, dy: f64) -> Self {
        Self { dtheta, dx, dy }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds a twist from a `[dx, dy, dtheta]` vector.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            dtheta: v[2],
            dx: v[0],
            dy: v[1],
        }
    }

    /// `[dx, dy, dtheta]`.
    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dtheta)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn exp(&self) -> Pose2 {
        let (a, b) = v_coefficients(self.dtheta);
        Pose2::new(
            self.dtheta,
            a * self.dx - b * self.dy,
            b * self.dx + a * self.dy,
        )
    }

    pub fn log(pose: &Pose2) -> Twist2 {
        let theta = pose.theta;
        let (a, b) = v_coefficients(theta);
        // V^-1 = 1/(a^2 + b^2) [a b; -b a]
        let det = a * a + b * b;
        Twist2 {
            dtheta: theta,
            dx: (a * pose.x + b * pose.y) / det,
            dy: (-b * pose.x + a * pose.y) / det,
        }
    }
}

/// Jacobian of `q = (T exp(xi))^-1 m` with respect to `xi = [dx, dy, dtheta]`
/// at `xi = 0`, given the local point `q = T^-1 m`.
pub fn local_point_jacobian(q: &Vector2<f64>) -> Matrix2x3<f64> {
    Matrix2x3::new(-1.0, 0.0, q.y, 0.0, -1.0, -q.x)
}
