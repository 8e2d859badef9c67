//! Small fixed-size linear algebra, generic over [`Scalar`] so the same code
//! runs on `f64` and on the differentiation tape.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

pub const fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    pub fn cst(v: Vec3<f64>) -> Self {
        Vec3::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }

    pub fn zero() -> Self {
        Vec3::cst(vec3(0.0, 0.0, 0.0))
    }

    pub fn val(&self) -> Vec3<f64> {
        vec3(self.x.val(), self.y.val(), self.z.val())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn normalize(&self) -> Self {
        *self / self.norm()
    }

    pub fn scale(&self, s: T) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Vec3<f64> {
    pub fn dist(&self, o: &Self) -> f64 {
        (*self - *o).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min_elem(&self, o: &Self) -> Self {
        vec3(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_elem(&self, o: &Self) -> Self {
        vec3(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<f64> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> std::ops::Div<T> for Vec3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T = f64> {
    pub m: [[T; 3]; 3],
}

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let o = T::cst(0.0);
        let l = T::cst(1.0);
        Mat3 {
            m: [[l, o, o], [o, l, o], [o, o, l]],
        }
    }

    pub fn cst(a: &Mat3<f64>) -> Self {
        Mat3 {
            m: a.m.map(|r| r.map(T::cst)),
        }
    }

    pub fn val(&self) -> Mat3<f64> {
        Mat3 {
            m: self.m.map(|r| r.map(|v| v.val())),
        }
    }

    /// Matrix whose columns are `a`, `b`, `c`.
    pub fn from_cols(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Self {
        Mat3 {
            m: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]],
        }
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Mat3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut m = [[T::cst(0.0); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Mat3 { m }
    }

    pub fn det(&self) -> T {
        self.col(0).dot(&self.col(1).cross(&self.col(2)))
    }

    /// Rotation by `angle` about the unit vector `axis` (Rodrigues).
    pub fn rotation(axis: &Vec3<T>, angle: T) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let t = T::cst(1.0) - c;
        let (x, y, z) = (axis.x, axis.y, axis.z);
        Mat3 {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Rotation about the local x axis.
    pub fn rot_x(angle: T) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let (o, l) = (T::cst(0.0), T::cst(1.0));
        Mat3 {
            m: [[l, o, o], [o, c, -s], [o, s, c]],
        }
    }

    /// Rotation about the local y axis.
    pub fn rot_y(angle: T) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let (o, l) = (T::cst(0.0), T::cst(1.0));
        Mat3 {
            m: [[c, o, s], [o, l, o], [-s, o, c]],
        }
    }

    pub fn flatten(&self) -> [T; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

impl Mat3<f64> {
    /// Largest absolute entry of `self^T self - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul_mat(self);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((p.m[i][j] - target).abs());
            }
        }
        e
    }
}

/// A rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid<T = f64> {
    pub rot: Mat3<T>,
    pub trans: Vec3<T>,
}

impl<T: Scalar> Rigid<T> {
    pub fn identity() -> Self {
        Rigid {
            rot: Mat3::identity(),
            trans: Vec3::zero(),
        }
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rot.mul_vec(p) + self.trans
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Rigid {
            rot: rt,
            trans: -rt.mul_vec(&self.trans),
        }
    }

    pub fn compose(&self, inner: &Self) -> Self {
        Rigid {
            rot: self.rot.mul_mat(&inner.rot),
            trans: self.rot.mul_vec(&inner.trans) + self.trans,
        }
    }

    pub fn val(&self) -> Rigid<f64> {
        Rigid {
            rot: self.rot.val(),
            trans: self.trans.val(),
        }
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_homogeneous(&self) -> [[T; 4]; 4] {
        let r = &self.rot.m;
        let t = &self.trans;
        let (o, l) = (T::cst(0.0), T::cst(1.0));
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [o, o, o, l],
        ]
    }
}

/// Uniform random direction on the unit sphere.
pub fn random_direction<R: rand::Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    vec3(r * phi.cos(), r * phi.sin(), z)
}

/// Two unit vectors completing `d` (unit) to a right-handed basis.
pub fn orthonormal_basis(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { vec3(1.0, 0.0, 0.0) } else { vec3(0.0, 1.0, 0.0) };
    let u = d.cross(&helper).normalize();
    (u, d.cross(&u))
}

/// Points within `radius` of the segment `a`–`b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vec3, b: Vec3, radius: f64) -> Self {
        Capsule { a, b, radius }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(&self.b)
    }

    /// Distance from `p` to the axis segment.
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let l2 = ab.norm_sq();
        let t = if l2 > 0.0 { ((*p - self.a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
        p.dist(&(self.a + ab * t))
    }

    /// Signed distance, negative inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.axis_distance(p) - self.radius
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.sdf(p) < 0.0
    }

    pub fn volume(&self) -> f64 {
        let r = self.radius;
        std::f64::consts::PI * r * r * (self.length() + 4.0 / 3.0 * r)
    }

    pub fn area(&self) -> f64 {
        let r = self.radius;
        std::f64::consts::TAU * r * (self.length() + 2.0 * r)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let r = vec3(self.radius, self.radius, self.radius);
        (self.a.min_elem(&self.b) - r, self.a.max_elem(&self.b) + r)
    }

    /// Area-uniform point on the surface.
    pub fn sample_surface<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let l = self.length();
        let r = self.radius;
        let axis = if l > 0.0 { (self.b - self.a) / l } else { vec3(0.0, 0.0, 1.0) };
        if rng.random::<f64>() * (l + 2.0 * r) < l {
            let (u, v) = orthonormal_basis(&axis);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let t: f64 = rng.random();
            self.a + axis * (t * l) + (u * phi.cos() + v * phi.sin()) * r
        } else {
            // the two end caps together form one full sphere
            let d = random_direction(rng);
            let c = if d.dot(&axis) >= 0.0 { self.b } else { self.a };
            c + d * r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodrigues_matches_axis_rotations() {
        let a = 0.37;
        let rx = Mat3::<f64>::rotation(&vec3(1.0, 0.0, 0.0), a);
        let ry = Mat3::<f64>::rotation(&vec3(0.0, 1.0, 0.0), a);
        for (p, q) in rx.flatten().iter().zip(Mat3::<f64>::rot_x(a).flatten()) {
            assert!((p - q).abs() < 1e-15);
        }
        for (p, q) in ry.flatten().iter().zip(Mat3::<f64>::rot_y(a).flatten()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn rigid_inverse_composes_to_identity() {
        let r = Rigid {
            rot: Mat3::<f64>::rotation(&vec3(1.0, 2.0, -0.5).normalize(), 1.1),
            trans: vec3(3.0, -4.0, 0.5),
        };
        let id = r.compose(&r.inverse());
        assert!(id.rot.orthonormality_error() < 1e-14);
        assert!(id.trans.norm() < 1e-14);
        assert!((r.rot.det() - 1.0).abs() < 1e-14);
    }
}
