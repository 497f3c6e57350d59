//! Geometry of states of polarization (SOPs).
//!
//! A fully polarized SOP is a point on the Poincaré sphere, carried here as a
//! normalized [`StokesVector`]. Lossless SOP transformations are rotations of
//! the sphere and are represented exclusively as [`UnitQuaternion`]s; no 3×3
//! rotation matrices appear outside of test oracles.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Numerical tolerances shared by the whole crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Quaternion norms and other purely algebraic identities.
    pub algebraic: f64,
    /// Geometric identities on the sphere (mapping exactness, round trips).
    pub geometric: f64,
    /// Accepted deviation from unit norm for externally supplied SOPs.
    pub unit_input: f64,
    /// Cross-product norm below which two vectors are treated as parallel.
    pub parallel: f64,
    /// Default accepted deviation of the degree of polarization from 1.
    pub dop: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        algebraic: 1e-12,
        geometric: 1e-9,
        unit_input: 1e-6,
        parallel: 1e-12,
        dop: 1e-6,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Plain Cartesian 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction, or `None` for a zero or non-finite vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Raw four-component Stokes vector (intensity plus three polarization components).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector4 {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector4 {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector4 { s0, s1, s2, s3 }
    }

    pub fn degree_of_polarization(&self) -> f64 {
        Vec3::new(self.s1, self.s2, self.s3).norm() / self.s0
    }
}

/// Normalized Stokes vector: a point on the unit Poincaré sphere.
///
/// The three components always have unit Euclidean norm. Serialized as a
/// `[s1, s2, s3]` triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector(Vec3);

impl StokesVector {
    pub const H: StokesVector = StokesVector(Vec3::X);
    pub const V: StokesVector = StokesVector(Vec3::new(-1.0, 0.0, 0.0));
    pub const D: StokesVector = StokesVector(Vec3::Y);
    pub const A: StokesVector = StokesVector(Vec3::new(0.0, -1.0, 0.0));
    pub const R: StokesVector = StokesVector(Vec3::Z);
    pub const L: StokesVector = StokesVector(Vec3::new(0.0, 0.0, -1.0));

    /// Accepts components whose norm is within [`Tolerances::unit_input`] of 1
    /// and renormalizes them exactly.
    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        let v = Vec3::new(s1, s2, s3);
        if !v.is_finite() {
            return Err(Error::NonFinite("Stokes vector"));
        }
        if (v.norm() - 1.0).abs() > Tolerances::DEFAULT.unit_input {
            return Err(Error::NotUnit(s1, s2, s3));
        }
        Ok(Self::from_vec(v))
    }

    /// Keeps the components bit-for-bit; they must already be unit within
    /// [`Tolerances::geometric`].
    pub fn exact(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        let v = Vec3::new(s1, s2, s3);
        if !v.is_finite() {
            return Err(Error::NonFinite("Stokes vector"));
        }
        if (v.norm() - 1.0).abs() > Tolerances::DEFAULT.geometric {
            return Err(Error::NotUnit(s1, s2, s3));
        }
        Ok(StokesVector(v))
    }

    /// Projects any non-zero finite vector onto the sphere.
    pub fn from_direction(v: Vec3) -> Result<Self> {
        v.normalized()
            .map(StokesVector)
            .ok_or(Error::NonFinite("Stokes direction"))
    }

    /// Renormalizes a vector that is known to be (nearly) unit.
    /// Renormalizes, leaving vectors already unit to within rounding untouched.
    pub(crate) fn from_vec(v: Vec3) -> Self {
        let n = v.norm();
        if (n - 1.0).abs() <= 2.0 * f64::EPSILON {
            StokesVector(v)
        } else {
            StokesVector(v * (1.0 / n))
        }
    }

    pub fn s1(&self) -> f64 {
        self.0.x
    }

    pub fn s2(&self) -> f64 {
        self.0.y
    }

    pub fn s3(&self) -> f64 {
        self.0.z
    }

    pub fn as_vec(&self) -> Vec3 {
        self.0
    }

    pub fn to_array(&self) -> [f64; 3] {
        self.0.to_array()
    }
}

impl Serialize for StokesVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StokesVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [s1, s2, s3] = <[f64; 3]>::deserialize(deserializer)?;
        StokesVector::new(s1, s2, s3).map_err(serde::de::Error::custom)
    }
}

/// Divides the polarization components by the intensity.
///
/// Only fully polarized light is modeled; the degree of polarization must be
/// within `dop_tol` of one.
pub fn normalize(v: StokesVector4, dop_tol: f64) -> Result<StokesVector> {
    if v.s0.is_nan() || v.s0 <= 0.0 {
        return Err(Error::ZeroIntensity(v.s0));
    }
    let raw = Vec3::new(v.s1, v.s2, v.s3);
    if !raw.is_finite() || !v.s0.is_finite() {
        return Err(Error::NonFinite("Stokes vector"));
    }
    let dop = raw.norm() / v.s0;
    if (dop - 1.0).abs() >= dop_tol {
        return Err(Error::Depolarized {
            dop,
            tolerance: dop_tol,
        });
    }
    Ok(StokesVector::from_vec(raw * (1.0 / v.s0)))
}

/// Rotation axis and angle; the angle is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// `axis` must be unit within the algebraic tolerance; `angle` is wrapped.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        if !axis.is_finite() || !angle.is_finite() {
            return Err(Error::NonFinite("axis-angle"));
        }
        if (axis.norm() - 1.0).abs() > Tolerances::DEFAULT.algebraic {
            return Err(Error::NotUnit(axis.x, axis.y, axis.z));
        }
        Ok(AxisAngle {
            axis: axis * (1.0 / axis.norm()),
            angle: wrap_angle(angle),
        })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly 2π
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the four components; fails on a zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NonFinite("quaternion"));
        }
        Ok(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// True when both quaternions rotate every vector identically (`q` and `-q`).
    pub fn same_rotation(&self, other: &UnitQuaternion, tol: f64) -> bool {
        let d: f64 = self
            .components()
            .iter()
            .zip(other.components())
            .map(|(a, b)| a * b)
            .sum();
        (d.abs() - 1.0).abs() <= tol
    }
}

pub fn quat_from_axis_angle(aa: AxisAngle) -> UnitQuaternion {
    let half = 0.5 * aa.angle;
    let (s, c) = half.sin_cos();
    let v = aa.axis * s;
    UnitQuaternion::renormalized(c, v.x, v.y, v.z)
}

/// Canonical axis-angle form; near-identity rotations map to axis `(1,0,0)`, angle 0.
pub fn axis_angle_from_quat(q: UnitQuaternion) -> AxisAngle {
    let v = q.vector();
    let s = v.norm();
    if s < Tolerances::DEFAULT.algebraic {
        return AxisAngle {
            axis: Vec3::X,
            angle: 0.0,
        };
    }
    AxisAngle {
        axis: v * (1.0 / s),
        angle: wrap_angle(2.0 * s.atan2(q.w)),
    }
}

/// Image of `s` under `q`, i.e. the vector part of `q s q⁻¹`.
pub fn rotate(q: UnitQuaternion, s: StokesVector) -> StokesVector {
    StokesVector::from_vec(rotate_vec(q, s.0))
}

pub(crate) fn rotate_vec(q: UnitQuaternion, v: Vec3) -> Vec3 {
    let u = q.vector();
    let t = u.cross(v) * 2.0;
    v + t * q.w + u.cross(t)
}

/// Quaternion product `q1 q2`: apply `q2` first, then `q1`.
pub fn compose(q1: UnitQuaternion, q2: UnitQuaternion) -> UnitQuaternion {
    let (a, b) = (q1, q2);
    UnitQuaternion::renormalized(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

pub fn inverse(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: q.w,
        x: -q.x,
        y: -q.y,
        z: -q.z,
    }
}

/// Chord (Euclidean) distance on the sphere, in `[0, 2]`.
pub fn sop_distance(a: StokesVector, b: StokesVector) -> f64 {
    (a.0 - b.0).norm()
}

/// Great-circle angle between two SOPs.
pub fn angular_distance(a: StokesVector, b: StokesVector) -> f64 {
    a.0.cross(b.0).norm().atan2(a.0.dot(b.0)).clamp(0.0, PI)
}
