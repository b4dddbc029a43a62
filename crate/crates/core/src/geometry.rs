//! Frame algebra and camera geometry.
//!
//! Rotations are carried as 3×3 matrices everywhere inside the engine. The
//! only quaternion type is [`RollQuaternion`], which exists at the
//! end-effector orientation boundary.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotations farther than this from orthonormal are rejected outright.
pub const ORTHONORMAL_REJECT_TOL: f64 = 1e-6;
/// Rotations within this of orthonormal are accepted untouched.
pub const ORTHONORMAL_EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {deviation:.3e})")]
    NonOrthonormalRotation { deviation: f64 },
    #[error("rotation is a reflection (det = {det:.6})")]
    ImproperRotation { det: f64 },
    #[error("invalid depth: pixel ({u}, {v}) has no depth reading")]
    InvalidDepth { u: f64, v: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A point or free vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

/// Pinhole intrinsics of the depth-aligned color stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;
    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for RawIntrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        RawIntrinsics { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// A 640×480 stream with a 600 px focal length, centered principal point.
    pub fn vga_default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Forward pinhole projection; the inverse of [`back_project`] up to depth quantization.
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// A pixel with its raw depth reading. Zero depth encodes "no reading".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDepthPoint {
    pub u: f64,
    pub v: f64,
    pub depth_mm: u16,
}

/// Back-projects a pixel with depth into the camera frame (meters).
pub fn back_project(p: PixelDepthPoint, k: &CameraIntrinsics) -> Result<Point3, GeometryError> {
    if p.depth_mm == 0 {
        return Err(GeometryError::InvalidDepth { u: p.u, v: p.v });
    }
    let z = p.depth_mm as f64 / 1000.0;
    Ok(Point3::new((p.u - k.cx) * z / k.fx, (p.v - k.cy) * z / k.fy, z))
}

/// Rotation plus translation; maps `p` to `R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Validates the rotation. Rotations within [`ORTHONORMAL_REJECT_TOL`] but
    /// outside [`ORTHONORMAL_EXACT_TOL`] are projected onto the nearest rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        let rotation = validate_rotation(rotation)?;
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Point3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t.to_vector() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Point3 {
        Point3::from_vector(&self.translation)
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        apply_transform(self, p)
    }

    pub fn apply_vector(&self, v: Point3) -> Point3 {
        Point3::from_vector(&(self.rotation * v.to_vector()))
    }

    pub fn inverse(&self) -> Self {
        Self { rotation: self.rotation.transpose(), translation: -(self.rotation.transpose() * self.translation) }
    }

    pub fn then(&self, outer: &RigidTransform) -> Self {
        compose(outer, self)
    }

    /// Largest absolute entry of `RᵀR − I`, and the determinant.
    pub fn orthonormality(&self) -> (f64, f64) {
        (orthonormal_deviation(&self.rotation), self.rotation.determinant())
    }
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

fn validate_rotation(r: Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let deviation = orthonormal_deviation(&r);
    if deviation > ORTHONORMAL_REJECT_TOL {
        return Err(GeometryError::NonOrthonormalRotation { deviation });
    }
    let det = r.determinant();
    if det < 0.0 {
        return Err(GeometryError::ImproperRotation { det });
    }
    if deviation <= ORTHONORMAL_EXACT_TOL {
        return Ok(r);
    }
    Ok(nearest_rotation(&r))
}

/// Projects a near-rotation onto SO(3) (polar decomposition via SVD).
pub fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Inverse of the homogeneous transform `[R t; 0 1]`.
pub fn invert_pose(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Result<RigidTransform, GeometryError> {
    Ok(RigidTransform::new(*rotation, *translation)?.inverse())
}

pub fn apply_transform(t: &RigidTransform, p: Point3) -> Point3 {
    Point3::from_vector(&(t.rotation * p.to_vector() + t.translation))
}

/// `compose(a, b)` maps `p` to `a(b(p))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform { rotation: a.rotation * b.rotation, translation: a.rotation * b.translation + a.translation }
}

/// Rotation about +z by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about a unit axis (Rodrigues).
pub fn rot_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = axis;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        RawTransform { rotation: rows, translation: [self.translation.x, self.translation.y, self.translation.z] }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawTransform::deserialize(d)?;
        let r = matrix_from_rows(&raw.rotation);
        RigidTransform::new(r, Vector3::from(raw.translation)).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_from_rows(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

pub fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut rows = [[0.0; 3]; 3];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    rows
}

/// A unit quaternion restricted to rotations about the x-axis.
///
/// Built from the palm angle φ as `(−sin(φ/2), 0, 0, cos(φ/2))`, so the
/// encoded rotation is `−φ` about +x. The sign is not canonicalized: `q`
/// and `−q` describe the same rotation and both may appear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RollQuaternion {
    qx: f64,
    qw: f64,
}

impl RollQuaternion {
    pub const IDENTITY: RollQuaternion = RollQuaternion { qx: 0.0, qw: 1.0 };

    pub fn from_palm_angle(phi: f64) -> Self {
        let half = 0.5 * phi;
        Self { qx: -half.sin(), qw: half.cos() }
    }

    /// Rotation of `angle` radians about +x.
    pub fn from_x_rotation(angle: f64) -> Self {
        Self::from_palm_angle(-angle)
    }

    /// Components in `(qx, qy, qz, qw)` order.
    pub fn components(&self) -> [f64; 4] {
        [self.qx, 0.0, 0.0, self.qw]
    }

    pub fn qx(&self) -> f64 {
        self.qx
    }

    pub fn qw(&self) -> f64 {
        self.qw
    }

    /// Signed rotation about +x in (−π, π].
    pub fn x_rotation(&self) -> f64 {
        wrap_angle(2.0 * self.qx.atan2(self.qw))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rot_x(self.x_rotation())
    }
}

impl TryFrom<[f64; 4]> for RollQuaternion {
    type Error = String;
    fn try_from(c: [f64; 4]) -> Result<Self, String> {
        if c[1] != 0.0 || c[2] != 0.0 {
            return Err(format!("roll quaternion must have qy = qz = 0, got {c:?}"));
        }
        let n = (c[0] * c[0] + c[3] * c[3]).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(format!("roll quaternion must be unit norm, got |q| = {n}"));
        }
        Ok(Self { qx: c[0] / n, qw: c[3] / n })
    }
}

impl From<RollQuaternion> for [f64; 4] {
    fn from(q: RollQuaternion) -> Self {
        q.components()
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
