//! Pinhole camera model, small fixed-size vector algebra and rotations.
//!
//! Pixel coordinates are real-valued: integer values address pixel centers,
//! `u` grows to the right and `v` grows downward. The camera frame has `z`
//! along the optical axis, `x` along `u` and `y` along `v`.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cannot back-project a point with zero depth")]
    DegenerateDepth,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics: focal length and principal point in pixels, resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub f: T,
    pub u0: T,
    pub v0: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(f: T, u0: T, v0: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { f, u0, v0, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Principal point at the image center.
    pub fn centered(f: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(f, T::of(width as f64 / 2.0), T::of(height as f64 / 2.0), width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f > T::zero()) || !self.f.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!("focal length must be positive, got {:?}", self.f)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be nonzero".into()));
        }
        let inside = |c: T, size: u32| c >= T::zero() && c < T::of(size as f64);
        if !inside(self.u0, self.width) || !inside(self.v0, self.height) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({:?}, {:?}) outside {}x{} image",
                self.u0, self.v0, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            f: U::of(self.f.to_f64_lossy()),
            u0: U::of(self.u0.to_f64_lossy()),
            v0: U::of(self.v0.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}

/// A point (or free vector) in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > T::norm_epsilon()).then(|| *self / n)
    }

    pub fn lerp(&self, o: &Self, t: T) -> Self {
        *self + (*o - *self) * t
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(&self) -> Point3<U> {
        Point3::new(U::of(self.x.to_f64_lossy()), U::of(self.y.to_f64_lossy()), U::of(self.z.to_f64_lossy()))
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Point3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Point3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Image-plane vector or pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> Vec2<T> {
    pub const fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn dot(&self, o: &Self) -> T {
        self.u * o.u + self.v * o.v
    }

    pub fn norm(&self) -> T {
        self.u.hypot(self.v)
    }

    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > T::norm_epsilon()).then(|| Self::new(self.u / n, self.v / n))
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.u - o.u, self.v - o.v)
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.u + o.u, self.v + o.v)
    }
}

/// Pixel coordinates plus depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelDepth<T> {
    pub u: T,
    pub v: T,
    pub z: T,
}

impl<T: Real> PixelDepth<T> {
    pub const fn new(u: T, v: T, z: T) -> Self {
        Self { u, v, z }
    }

    pub fn pixel(&self) -> Vec2<T> {
        Vec2::new(self.u, self.v)
    }
}

/// Back-project a pixel with depth into the camera frame.
pub fn project<T: Real>(p: PixelDepth<T>, k: &CameraIntrinsics<T>) -> Point3<T> {
    Point3::new((p.u - k.u0) / k.f * p.z, (p.v - k.v0) / k.f * p.z, p.z)
}

/// Image a camera-frame point. Inverse of [`project`].
pub fn unproject<T: Real>(p: Point3<T>, k: &CameraIntrinsics<T>) -> Result<PixelDepth<T>, GeometryError> {
    if p.z == T::zero() || !p.z.is_finite() {
        return Err(GeometryError::DegenerateDepth);
    }
    Ok(PixelDepth::new(p.x * k.f / p.z + k.u0, p.y * k.f / p.z + k.v0, p.z))
}

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        let m = &self.m;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        let mut t = *m;
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Self { m: t }
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).fold(T::zero(), |acc, k| acc + self.m[i][k] * rhs.m[k][j]);
            }
        }
        Self { m: out }
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> T {
        let p = self.transpose().compose(self);
        let mut worst = T::zero();
        for (i, row) in p.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { *v - T::one() } else { *v };
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    /// Unit quaternion with non-negative scalar part.
    pub fn to_quaternion(&self) -> Quaternion<T> {
        let m = &self.m;
        let one = T::one();
        let two = T::of(2.0);
        let quarter = T::of(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * two;
            Quaternion {
                w: quarter * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * two;
            Quaternion {
                w: (m[2][1] - m[1][2]) / s,
                x: quarter * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * two;
            Quaternion {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: quarter * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * two;
            Quaternion {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: quarter * s,
            }
        };
        if q.w < T::zero() {
            Quaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z }
        } else {
            q
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Rotation by `angle` about `axis` (Rodrigues). A near-zero axis yields the identity.
pub fn rodrigues_rotation<T: Real>(axis: Point3<T>, angle: T) -> RotationMatrix<T> {
    let Some(k) = axis.normalized() else {
        return RotationMatrix::identity();
    };
    let (s, c) = angle.sin_cos();
    let t = T::one() - c;
    let (x, y, z) = (k.x, k.y, k.z);
    // R = I + sin(a) K + (1 - cos(a)) K^2, expanded.
    RotationMatrix {
        m: [
            [c + t * x * x, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, c + t * y * y, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, c + t * z * z],
        ],
    }
}

/// Unit vector orthogonal to `n`, built from the basis axis where `n` is smallest.
pub fn orthogonal_axis<T: Real>(n: &Point3<T>) -> Point3<T> {
    let (ax, ay, az) = (n.x.abs(), n.y.abs(), n.z.abs());
    let e = if ax <= ay && ax <= az {
        Point3::new(T::one(), T::zero(), T::zero())
    } else if ay <= az {
        Point3::new(T::zero(), T::one(), T::zero())
    } else {
        Point3::new(T::zero(), T::zero(), T::one())
    };
    n.cross(&e).normalized().unwrap_or(e)
}

/// Minimal rotation taking the direction of `n` onto the direction of `target`.
///
/// Antiparallel inputs rotate by π about [`orthogonal_axis`]`(n)`. Zero-length
/// inputs yield the identity.
pub fn align_to_axis<T: Real>(n: Point3<T>, target: Point3<T>) -> RotationMatrix<T> {
    let (Some(n), Some(t)) = (n.normalized(), target.normalized()) else {
        return RotationMatrix::identity();
    };
    let axis = n.cross(&t);
    let sin = axis.norm();
    let cos = n.dot(&t);
    if sin <= T::norm_epsilon() {
        if cos > T::zero() {
            return RotationMatrix::identity();
        }
        return rodrigues_rotation(orthogonal_axis(&n), T::PI());
    }
    rodrigues_rotation(axis, sin.atan2(cos))
}
