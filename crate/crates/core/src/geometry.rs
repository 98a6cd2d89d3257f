//! Quaternion and pose algebra. Quaternions are stored scalar-first as
//! `[u, v1, v2, v3]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Vec3<T> = [T; 3];
pub type Quat<T> = [T; 4];

/// World-frame pose: `q` rotates sensor-frame vectors into the world frame,
/// then `t` translates them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub t: Vec3<T>,
    pub q: Quat<T>,
}

/// Regression target: translation plus log-quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPose<T> {
    pub t: Vec3<T>,
    pub w: Vec3<T>,
}

impl<T: Scalar> Pose<T> {
    /// Normalizes and canonicalizes `q`.
    pub fn new(t: Vec3<T>, q: Quat<T>) -> Result<Self> {
        Ok(Self {
            t,
            q: quat_canonicalize(quat_normalize(q)?),
        })
    }

    pub fn identity() -> Self {
        Self {
            t: [T::zero(); 3],
            q: [T::one(), T::zero(), T::zero(), T::zero()],
        }
    }

    pub fn to_log(&self) -> LogPose<T> {
        LogPose {
            t: self.t,
            w: quat_log(quat_canonicalize(self.q)),
        }
    }

    /// Maps a sensor-frame point into the world frame.
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        let r = quat_rotate(self.q, p);
        [r[0] + self.t[0], r[1] + self.t[1], r[2] + self.t[2]]
    }
}

impl<T: Scalar> LogPose<T> {
    pub fn to_pose(&self) -> Result<Pose<T>> {
        Ok(Pose {
            t: self.t,
            q: quat_exp(self.w)?,
        })
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.t[0], self.t[1], self.t[2], self.w[0], self.w[1], self.w[2]]
    }
}

pub fn norm3<T: Scalar>(v: Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn norm4<T: Scalar>(q: Quat<T>) -> T {
    q.iter().fold(T::zero(), |acc, &e| acc + e * e).sqrt()
}

pub fn quat_normalize<T: Scalar>(q: Quat<T>) -> Result<Quat<T>> {
    let n = norm4(q);
    if !n.is_finite() || n <= T::lit(1e-12) {
        return Err(Error::DegenerateQuaternion { norm: n.as_f64() });
    }
    Ok(q.map(|e| e / n))
}

/// `q` and `-q` encode one rotation; the canonical member has `u >= 0`.
/// `u == 0` is left as is.
pub fn quat_canonicalize<T: Scalar>(q: Quat<T>) -> Quat<T> {
    if q[0] < T::zero() {
        q.map(|e| -e)
    } else {
        q
    }
}

/// `(v / |v|) * acos(u)`, or zero when `v` vanishes.
pub fn quat_log<T: Scalar>(q: Quat<T>) -> Vec3<T> {
    let v = [q[1], q[2], q[3]];
    let n = norm3(v);
    if n == T::zero() {
        return [T::zero(); 3];
    }
    let angle = q[0].max(-T::one()).min(T::one()).acos();
    v.map(|e| e / n * angle)
}

/// Inverse of [`quat_log`] for `|w| <= pi`.
pub fn quat_exp<T: Scalar>(w: Vec3<T>) -> Result<Quat<T>> {
    let n = norm3(w);
    if !n.is_finite() || n > T::PI() {
        return Err(Error::RotationOutOfRange { norm: n.as_f64() });
    }
    if n == T::zero() {
        return Ok([T::one(), T::zero(), T::zero(), T::zero()]);
    }
    let s = n.sin() / n;
    Ok([n.cos(), w[0] * s, w[1] * s, w[2] * s])
}

pub fn quat_mul<T: Scalar>(a: Quat<T>, b: Quat<T>) -> Quat<T> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Unit quaternion for a rotation of `angle` radians about a unit `axis`.
pub fn quat_from_axis_angle<T: Scalar>(axis: Vec3<T>, angle: T) -> Quat<T> {
    let half = angle / T::lit(2.0);
    let s = half.sin();
    [half.cos(), axis[0] * s, axis[1] * s, axis[2] * s]
}

pub fn quat_rotate<T: Scalar>(q: Quat<T>, p: Vec3<T>) -> Vec3<T> {
    let two = T::lit(2.0);
    let (u, v) = (q[0], [q[1], q[2], q[3]]);
    let c = cross(v, p);
    let cc = cross(v, c);
    [
        p[0] + two * (u * c[0] + cc[0]),
        p[1] + two * (u * c[1] + cc[1]),
        p[2] + two * (u * c[2] + cc[2]),
    ]
}

fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Geodesic angle between two rotations in degrees, `2 acos |<q, q_hat>|`.
///
/// Evaluated through the equivalent half-chord form
/// `4 atan2(|q - s q_hat|, |q + s q_hat|)` with `s = sign <q, q_hat>`, which
/// is exact at zero and well conditioned for small angles.
pub fn rotation_error_deg<T: Scalar>(q: Quat<T>, q_hat: Quat<T>) -> T {
    let d = (0..4).fold(T::zero(), |acc, i| acc + q[i] * q_hat[i]);
    if d == T::zero() {
        return T::lit(180.0);
    }
    let s = if d > T::zero() { T::one() } else { -T::one() };
    let diff: Quat<T> = std::array::from_fn(|i| q[i] - s * q_hat[i]);
    let sum: Quat<T> = std::array::from_fn(|i| q[i] + s * q_hat[i]);
    let angle = T::lit(4.0) * norm4(diff).atan2(norm4(sum));
    angle.to_degrees().min(T::lit(180.0))
}

pub fn translation_error_m<T: Scalar>(t: Vec3<T>, t_hat: Vec3<T>) -> T {
    norm3([t[0] - t_hat[0], t[1] - t_hat[1], t[2] - t_hat[2]])
}
