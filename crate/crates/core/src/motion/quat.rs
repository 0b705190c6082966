use std::ops::Mul;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on `‖q‖ − 1` accepted wherever a unit quaternion is required.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Rotation quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation by `angle` about the vertical (+y) axis.
    pub fn from_yaw(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit-norm copy; a (near) zero quaternion maps to the identity.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if !(n > 1e-12) {
            return Self::IDENTITY;
        }
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with `w ≥ 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = self * p * self.conj();
        [r.x, r.y, r.z]
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Heading of the rotated +z axis about +y.
    pub fn yaw(self) -> f64 {
        let f = self.rotate([0.0, 0.0, 1.0]);
        f[0].atan2(f[2])
    }

    pub fn to_matrix(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shortest-path spherical interpolation.
    pub fn slerp(self, other: Quat, t: f64) -> Quat {
        let mut b = other;
        let mut d = self.dot(b);
        if d < 0.0 {
            b = b.neg();
            d = -d;
        }
        if d > 0.9995 {
            return Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            )
            .normalized();
        }
        let theta = d.min(1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        Quat::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
        .normalized()
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Angle of the relative rotation between two unit quaternions, in `[0, π]`.
pub fn geodesic_distance(a: Quat, b: Quat) -> Result<f64> {
    for (name, q) in [("first", a), ("second", b)] {
        if !q.is_unit() {
            return Err(Error::Validation(format!(
                "{name} quaternion has norm {} (expected 1 ± {UNIT_TOLERANCE})",
                q.norm()
            )));
        }
    }
    // 4·atan2(‖a−b‖, ‖a+b‖) on the same hemisphere: exact zero for equal inputs
    let b = if a.dot(b) < 0.0 { b.neg() } else { b };
    let diff = Quat::new(a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z).norm();
    let sum = Quat::new(a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z).norm();
    Ok(4.0 * diff.atan2(sum))
}

/// `‖log(R·R̂ᵀ)‖` for rotation matrices, via `atan2(sin θ, cos θ)`.
pub fn geodesic_distance_matrix(r: &Mat3, rh: &Mat3) -> f64 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| r[i][k] * rh[j][k]).sum();
        }
    }
    let cos = (m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0;
    let sx = m[2][1] - m[1][2];
    let sy = m[0][2] - m[2][0];
    let sz = m[1][0] - m[0][1];
    let sin = (sx * sx + sy * sy + sz * sz).sqrt() / 2.0;
    sin.atan2(cos)
}
