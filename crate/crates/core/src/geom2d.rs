//! Planar geometry for circle-path following.
//!
//! All lengths are centimetres and all angles radians. Angles leaving this
//! module are normalized to `(-π, π]`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance below which a point is treated as coincident with another.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// Tolerance used to decide whether a point lies on a circle.
pub const ON_CIRCLE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("projection undefined: point is {distance:e} cm from the circle centre")]
    DegenerateProjection { distance: f64 },
    #[error("point is {residual:e} cm off the circle")]
    NotOnCircle { residual: f64 },
    #[error("points coincide (separation {distance:e} cm)")]
    CoincidentPoints { distance: f64 },
    #[error("invalid circle radius {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle`.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Heading of the vector, `atan2(y, x)`.
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation by `theta` about the origin.
    pub fn rotated(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Direction in which agents are meant to travel around the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    CounterClockwise,
    Clockwise,
}

impl Orientation {
    /// +1 for counter-clockwise, -1 for clockwise.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::CounterClockwise => 1.0,
            Orientation::Clockwise => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePath {
    pub center: Vec2,
    pub radius: f64,
    #[serde(default)]
    pub orientation: Orientation,
}

impl CirclePath {
    pub fn new(center: Vec2, radius: f64, orientation: Orientation) -> Result<Self, GeomError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeomError::InvalidRadius(radius));
        }
        Ok(Self {
            center,
            radius,
            orientation,
        })
    }

    /// Point on the circle at polar angle `theta` about the centre.
    pub fn point_at(&self, theta: f64) -> Vec2 {
        self.center + Vec2::from_angle(theta) * self.radius
    }
}

/// Normalize an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can land exactly on TAU after rounding
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Closest point on the circle to `p`, and the signed distance to it
/// (positive inside the circle, negative outside).
pub fn project_to_circle(p: Vec2, c: &CirclePath) -> Result<(Vec2, f64), GeomError> {
    let offset = p - c.center;
    let r = offset.norm();
    if r < COINCIDENT_EPS {
        return Err(GeomError::DegenerateProjection { distance: r });
    }
    let proj = c.center + offset * (c.radius / r);
    Ok((proj, c.radius - r))
}

/// Heading of the tangent at `point`, pointing along the traversal direction.
pub fn tangent_heading(point: Vec2, c: &CirclePath) -> Result<f64, GeomError> {
    let offset = point - c.center;
    let residual = (offset.norm() - c.radius).abs();
    if residual > ON_CIRCLE_EPS {
        return Err(GeomError::NotOnCircle { residual });
    }
    Ok(wrap_angle(
        offset.angle() + c.orientation.sign() * std::f64::consts::FRAC_PI_2,
    ))
}

/// Look-ahead target on the circle: the intersection of the path with the
/// perceptual circle of radius `lookahead` around `p` that lies ahead of the
/// projection in the traversal direction. Falls back to the projection when
/// the perceptual circle does not reach the path.
pub fn traction_point(p: Vec2, c: &CirclePath, lookahead: f64) -> Result<Vec2, GeomError> {
    let (proj, _) = project_to_circle(p, c)?;
    let offset = p - c.center;
    let dist = offset.norm();
    let r = c.radius;
    // Intersection exists when |r - dist| <= lookahead <= r + dist.
    if (r - dist).abs() > lookahead || lookahead > r + dist {
        return Ok(proj);
    }
    // Angle at the centre between the robot direction and the intersection,
    // by the law of cosines.
    let cos_gamma = ((dist * dist + r * r - lookahead * lookahead) / (2.0 * dist * r)).clamp(-1.0, 1.0);
    let gamma = cos_gamma.acos();
    Ok(c.point_at(offset.angle() + c.orientation.sign() * gamma))
}

/// Bearing of `p_j` as seen from `p_i`, relative to heading `heading_i`.
pub fn relative_bearing(p_i: Vec2, heading_i: f64, p_j: Vec2) -> Result<f64, GeomError> {
    let delta = p_j - p_i;
    let distance = delta.norm();
    if distance < COINCIDENT_EPS {
        return Err(GeomError::CoincidentPoints { distance });
    }
    Ok(wrap_angle(delta.angle() - heading_i))
}

/// Chord length subtended by a central angle on a circle of radius `radius`.
pub fn chord(radius: f64, central_angle: f64) -> f64 {
    2.0 * radius * (central_angle / 2.0).sin().abs()
}
