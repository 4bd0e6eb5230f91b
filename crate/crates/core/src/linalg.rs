//! Fixed-size vector, matrix and quaternion types used by the camera and splat math.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }

    #[inline]
    pub fn zeros() -> Self {
        Self([T::zero(); 3])
    }

    #[inline]
    pub fn unit(axis: usize) -> Self {
        let mut v = Self::zeros();
        v.0[axis] = T::one();
        v
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = o.0;
        Self([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Self(self.0.map(|c| c * s))
    }

    #[inline]
    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3(self.0.map(f))
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, c| m.max(c.abs()))
    }

    /// Skew-symmetric matrix `[v]x` with `[v]x w = v x w`.
    pub fn hat(&self) -> Mat3<T> {
        let [x, y, z] = self.0;
        let o = T::zero();
        Mat3([[o, -z, y], [z, o, -x], [-y, x, o]])
    }

    pub fn outer(&self, o: &Self) -> Mat3<T> {
        let mut m = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r] * o.0[c];
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Real> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self(self.0.map(|c| -c))
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn zeros() -> Self {
        Self([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one(), T::one())
    }

    pub fn diag(a: T, b: T, c: T) -> Self {
        let mut m = Self::zeros();
        m.0[0][0] = a;
        m.0[1][1] = b;
        m.0[2][2] = c;
        m
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self([r0.0, r1.0, r2.0])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros();
        for r in 0..3 {
            for c in 0..3 {
                t.0[c][r] = self.0[r][c];
            }
        }
        t
    }

    pub fn row(&self, r: usize) -> Vec3<T> {
        Vec3(self.0[r])
    }

    pub fn col(&self, c: usize) -> Vec3<T> {
        Vec3([self.0[0][c], self.0[1][c], self.0[2][c]])
    }

    pub fn scale(&self, s: T) -> Self {
        Self(self.0.map(|r| r.map(|v| v * s)))
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Frobenius inner product.
    pub fn frobenius_dot(&self, o: &Self) -> T {
        let mut acc = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                acc += self.0[r][c] * o.0[r][c];
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                m = m.max((self.0[r][c] - o.0[r][c]).abs());
            }
        }
        m
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] += o.0[r][c];
            }
        }
        m
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut m = self;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] -= o.0[r][c];
            }
        }
        m
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = Self::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        m
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(&v), self.row(1).dot(&v), self.row(2).dot(&v)])
    }
}

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn vector(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Unit quaternion for a rotation of `|v|` radians about `v`.
    pub fn from_rotation_vector(v: &Vec3<T>) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let half = theta * T::half();
        let (w, k) = if theta2 < T::lit(1e-12) {
            // sin(t/2)/t to third order
            (T::one() - theta2 / T::lit(8.0), T::half() - theta2 / T::lit(48.0))
        } else {
            (half.cos(), half.sin() / theta)
        };
        Self::new(w, v.x() * k, v.y() * k, v.z() * k)
    }

    /// Rotation vector of a unit quaternion on the canonical branch (angle in `[0, pi]`).
    pub fn to_rotation_vector(&self) -> Vec3<T> {
        let q = if self.w < T::zero() { self.neg() } else { *self };
        let v = q.vector();
        let s = v.norm();
        if s < T::lit(1e-8) {
            // 2 atan(s, w) / s ~ 2 / w (1 - s^2 / (3 w^2))
            let k = T::two() / q.w * (T::one() - s * s / (T::lit(3.0) * q.w * q.w));
            v.scale(k)
        } else {
            let angle = T::two() * s.atan2(q.w);
            v.scale(angle / s)
        }
    }

    fn neg(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_matrix(&self) -> Mat3<T> {
        let Self { w, x, y, z } = *self;
        let two = T::two();
        let one = T::one();
        Mat3([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    /// Unit quaternion from a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3<T>) -> Self {
        let m = &m.0;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let one = T::one();
        let quarter = T::lit(0.25);
        let q = if tr > T::zero() {
            let s = (tr + one).sqrt() * T::two();
            Self::new(quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::two();
            Self::new((m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::two();
            Self::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::two();
            Self::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s)
        };
        q.normalized()
    }

    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        // v + 2 u x (u x v + w v)
        let u = self.vector();
        let t = u.cross(v) + v.scale(self.w);
        *v + u.cross(&t).scale(T::two())
    }

    pub fn cast<U: Real>(&self) -> Quat<U> {
        Quat::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_matrix_round_trip() {
        let q = Quat::from_rotation_vector(&Vec3::<f64>::new(0.3, -1.1, 0.7));
        let back = Quat::from_matrix(&q.to_matrix());
        assert!((q.dot(&back).abs() - 1.0).abs() < 1e-12);
        let v = Vec3::new(1.0, 2.0, -0.5);
        let a = q.rotate(&v);
        let b = q.to_matrix() * v;
        assert!((a - b).max_abs() < 1e-12);
    }

    #[test]
    fn hat_matches_cross() {
        let a = Vec3::new(0.2, -0.4, 1.5);
        let b = Vec3::new(-3.0, 0.1, 0.25);
        assert!((a.hat() * b - a.cross(&b)).max_abs() < 1e-15);
    }

    #[test]
    fn rotation_vector_round_trip_near_pi() {
        let v = Vec3::new(0.0, 0.0, std::f64::consts::PI - 1e-4);
        let back = Quat::from_rotation_vector(&v).to_rotation_vector();
        assert!((back - v).max_abs() < 1e-9);
    }
}
