//! Scalar-generic 3-vectors and unit quaternions.
//!
//! Everything here is parameterised over [`Scalar`], which is implemented for
//! `f32` and `f64`. The wire format and the agents fix the scalar to `f64`.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};
use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 representable in scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    pub const fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn splat(v: S) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_f64(x: f64, y: f64, z: f64) -> Self {
        Self::new(S::of(x), S::of(y), S::of(z))
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn dot(self, other: Self) -> S {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> S {
        self.dot(self)
    }

    pub fn norm(self) -> S {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Component-wise product, used for diagonal gain matrices.
    pub fn hadamard(self, other: Self) -> Self {
        Self::new(self.x * other.x, self.y * other.y, self.z * other.z)
    }

    pub fn map(self, f: impl Fn(S) -> S) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    /// Scales the vector down so that its norm does not exceed `limit`.
    pub fn clamp_norm(self, limit: S) -> Self {
        let n = self.norm();
        if n > limit && n > S::zero() {
            self * (limit / n)
        } else {
            self
        }
    }

    /// Per-axis clamp to `[-limit, limit]`.
    pub fn clamp_each(self, limit: S) -> Self {
        self.map(|c| c.max(-limit).min(limit))
    }

    pub fn cast<T: Scalar>(self) -> Vec3<T> {
        Vec3::new(
            T::of(self.x.to_f64_lossy()),
            T::of(self.y.to_f64_lossy()),
            T::of(self.z.to_f64_lossy()),
        )
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> AddAssign for Vec3<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> SubAssign for Vec3<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<S: Scalar> Mul<S> for Vec3<S> {
    type Output = Self;
    fn mul(self, k: S) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }
}

impl<S: Scalar> Div<S> for Vec3<S> {
    type Output = Self;
    fn div(self, k: S) -> Self {
        Self::new(self.x / k, self.y / k, self.z / k)
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Default for Quat<S> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<S: Scalar> Quat<S> {
    pub const fn new(w: S, x: S, y: S, z: S) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(S::one(), S::zero(), S::zero(), S::zero())
    }

    /// Rotation of `angle` radians about the z axis.
    pub fn from_yaw(angle: S) -> Self {
        let half = angle / S::of(2.0);
        Self::new(half.cos(), S::zero(), S::zero(), half.sin())
    }

    /// Quaternion exponential of the pure quaternion `v` (a rotation vector
    /// scaled by one half): `exp(v) = (cos|v|, v/|v| sin|v|)`.
    pub fn exp(v: Vec3<S>) -> Self {
        let theta = v.norm();
        if theta == S::zero() {
            return Self::identity();
        }
        // sin(theta)/theta, with a series expansion near zero.
        let sinc = if theta < S::of(1e-4) {
            S::one() - theta * theta / S::of(6.0)
        } else {
            theta.sin() / theta
        };
        Self::new(theta.cos(), v.x * sinc, v.y * sinc, v.z * sinc)
    }

    pub fn norm(self) -> S {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn hamilton(self, rhs: Self) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Heading angle (rotation about world z), in `(-π, π]`.
    pub fn yaw(self) -> S {
        let two = S::of(2.0);
        let siny = two * (self.w * self.z + self.x * self.y);
        let cosy = S::one() - two * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    /// Component-wise closeness up to the double cover `q ~ -q`.
    pub fn approx_eq(self, other: Self, tol: S) -> bool {
        let same = (self.w - other.w).abs() <= tol
            && (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && (self.z - other.z).abs() <= tol;
        let flipped = (self.w + other.w).abs() <= tol
            && (self.x + other.x).abs() <= tol
            && (self.y + other.y).abs() <= tol
            && (self.z + other.z).abs() <= tol;
        same || flipped
    }

    pub fn cast<T: Scalar>(self) -> Quat<T> {
        Quat::new(
            T::of(self.w.to_f64_lossy()),
            T::of(self.x.to_f64_lossy()),
            T::of(self.y.to_f64_lossy()),
            T::of(self.z.to_f64_lossy()),
        )
    }
}

/// Integrates orientation `q` under a constant body-frame angular rate `w`
/// (rad/s) for `dt` seconds: `q ⊗ exp(½·w·dt)`, renormalised.
pub fn quat_integrate<S: Scalar>(q: Quat<S>, w: Vec3<S>, dt: S) -> Result<Quat<S>, DomainError> {
    if !q.is_finite() || !w.is_finite() || !dt.is_finite() {
        return Err(DomainError::NonFinite("quat_integrate input"));
    }
    if dt < S::zero() {
        return Err(DomainError::Negative("dt"));
    }
    let delta = Quat::exp(w * (dt / S::of(2.0)));
    Ok(q.hamilton(delta).normalized())
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle<S: Scalar>(a: S) -> S {
    let pi = S::of(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut r = a % two_pi;
    if r <= -pi {
        r = r + two_pi;
    } else if r > pi {
        r = r - two_pi;
    }
    r
}
