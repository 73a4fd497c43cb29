//! Points and directions in the room frame.
//!
//! The frame is right-handed with its origin at one floor corner: `x` runs
//! along the room width, `y` along the length and `z` points up. All lengths
//! are meters.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    /// Distance ignoring height.
    pub fn horizontal_distance(self, other: Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        (n.is_finite() && n > 0.0).then(|| self * (1.0 / n))
    }

    pub fn lerp(self, other: Point3, s: f64) -> Point3 {
        self + (other - self) * s
    }

    /// Angle in degrees between `self` and `other`, both treated as
    /// directions. Zero-length inputs yield 180 degrees.
    pub fn angle_deg(self, other: Point3) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 || !denom.is_finite() {
            return 180.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, rhs: f64) -> Point3 {
        Point3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// True when `point` lies within a view cone with apex `apex`, axis `aim` and
/// the given half angle.
pub fn in_cone(apex: Point3, aim: Point3, half_angle_deg: f64, point: Point3) -> bool {
    let to = point - apex;
    if to.norm() == 0.0 {
        return true;
    }
    aim.angle_deg(to) <= half_angle_deg
}
