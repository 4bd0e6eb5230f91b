//! Camera geometry: SE(3) pose algebra, pinhole projection, perturbations and survey paths.
//!
//! Convention: a [`Pose`] stores the world-to-camera rotation and the camera centre in world
//! coordinates, so a world point `p` maps to the camera frame as `R (p - c)`. Camera axes follow
//! the usual pinhole layout: x right, y down, z forward. As a rigid transform the pose is
//! `x -> R x + t` with `t = -R c`; group operations (`compose`, `inverse`, `exp`, `log`) act on
//! that transform. Twists are ordered `(omega, v)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::Error;
use crate::linalg::{Mat3, Quat, Vec3};
use crate::scalar::Real;

/// Camera-frame depth at or below which points are treated as behind the camera.
pub const NEAR_PLANE: f64 = 0.01;

const TAYLOR_THETA_SQ: f64 = 1e-4;

/// Local se(3) coordinates `(omega, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist<T>(pub [T; 6]);

impl<T: Real> Twist<T> {
    pub fn zero() -> Self {
        Self([T::zero(); 6])
    }

    pub fn from_parts(omega: Vec3<T>, v: Vec3<T>) -> Self {
        Self([omega[0], omega[1], omega[2], v[0], v[1], v[2]])
    }

    pub fn from_slice(s: &[T]) -> Self {
        let mut t = Self::zero();
        t.0.copy_from_slice(&s[..6]);
        t
    }

    pub fn omega(&self) -> Vec3<T> {
        Vec3([self.0[0], self.0[1], self.0[2]])
    }

    pub fn v(&self) -> Vec3<T> {
        Vec3([self.0[3], self.0[4], self.0[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.0.iter().zip(o.0.iter()).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self, Error> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the integer pixel `(width/2, height/2)`.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self, Error> {
        Self::new(focal, focal, T::lit((width / 2) as f64), T::lit((height / 2) as f64), width, height)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        let ok = self.width > 0
            && self.height > 0
            && self.fx > T::zero()
            && self.fy > T::zero()
            && self.cx >= T::zero()
            && self.cx < w
            && self.cy >= T::zero()
            && self.cy < h;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidIntrinsics)
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Camera extrinsics: world-to-camera rotation and camera centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub rotation: Quat<T>,
    pub center: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Quat<T>, center: Vec3<T>) -> Result<Self, Error> {
        if (rotation.norm() - T::one()).abs() > T::lit(1e-6) || !center.is_finite() {
            return Err(Error::InvalidPose);
        }
        Ok(Self { rotation, center })
    }

    pub fn identity() -> Self {
        Self { rotation: Quat::identity(), center: Vec3::zeros() }
    }

    /// Builds a pose from the rigid transform `x -> R x + t`.
    pub fn from_transform(rotation: Quat<T>, translation: Vec3<T>) -> Self {
        let center = -rotation.conjugate().rotate(&translation);
        Self { rotation, center }
    }

    /// Translation `t = -R c` of the rigid transform.
    pub fn translation(&self) -> Vec3<T> {
        -self.rotation.rotate(&self.center)
    }

    pub fn rotation_matrix(&self) -> Mat3<T> {
        self.rotation.to_matrix()
    }

    /// Camera looking from `eye` towards `target`; `down` fixes the image y axis.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, down: Vec3<T>) -> Result<Self, Error> {
        let fwd = target - eye;
        if fwd.norm() <= T::zero() {
            return Err(Error::InvalidPose);
        }
        let fwd = fwd.scale(T::one() / fwd.norm());
        let right = down.cross(&fwd);
        let rn = right.norm();
        if rn < T::lit(1e-12) {
            return Err(Error::InvalidPose);
        }
        let right = right.scale(T::one() / rn);
        let down = fwd.cross(&right);
        let r = Mat3::from_rows(right, down, fwd);
        Ok(Self { rotation: Quat::from_matrix(&r), center: eye })
    }

    /// Maps a world point into the camera frame.
    #[inline]
    pub fn to_camera(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(&(*p - self.center))
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose { rotation: self.rotation.cast(), center: self.center.map(|c| U::lit(c.to_f64_lossy())) }
    }
}

/// Group product of rigid transforms: `compose(a, b)` applies `b` first.
pub fn pose_compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    let rotation = (a.rotation * b.rotation).normalized();
    let translation = a.rotation.rotate(&b.translation()) + a.translation();
    Pose::from_transform(rotation, translation)
}

pub fn pose_inverse<T: Real>(p: &Pose<T>) -> Pose<T> {
    let rotation = p.rotation.conjugate();
    // inverse transform is x -> R^T x + c
    Pose::from_transform(rotation, p.center)
}

/// Coefficients `(1 - cos t)/t^2`, `(t - sin t)/t^3` with series fallback near zero.
fn so3_coefficients<T: Real>(theta_sq: T) -> (T, T) {
    if theta_sq < T::lit(TAYLOR_THETA_SQ) {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        (
            T::half() - t2 / T::lit(24.0) + t4 / T::lit(720.0),
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0),
        )
    } else {
        let t = theta_sq.sqrt();
        ((T::one() - t.cos()) / theta_sq, (t - t.sin()) / (theta_sq * t))
    }
}

/// Left Jacobian of SO(3), also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian<T: Real>(omega: &Vec3<T>) -> Mat3<T> {
    let (a, b) = so3_coefficients(omega.norm_squared());
    let w = omega.hat();
    Mat3::identity() + w.scale(a) + (w * w).scale(b)
}

fn so3_left_jacobian_inverse<T: Real>(omega: &Vec3<T>) -> Mat3<T> {
    let theta_sq = omega.norm_squared();
    let w = omega.hat();
    let k = if theta_sq < T::lit(TAYLOR_THETA_SQ) {
        T::lit(1.0 / 12.0) + theta_sq / T::lit(720.0) + theta_sq * theta_sq / T::lit(30240.0)
    } else {
        let t = theta_sq.sqrt();
        (T::one() - t * t.sin() / (T::two() * (T::one() - t.cos()))) / theta_sq
    };
    Mat3::identity() - w.scale(T::half()) + (w * w).scale(k)
}

pub fn se3_exp<T: Real>(t: &Twist<T>) -> Pose<T> {
    let omega = t.omega();
    let rotation = Quat::from_rotation_vector(&omega);
    let translation = so3_left_jacobian(&omega) * t.v();
    Pose::from_transform(rotation, translation)
}

pub fn se3_log<T: Real>(p: &Pose<T>) -> Twist<T> {
    let omega = p.rotation.to_rotation_vector();
    let v = so3_left_jacobian_inverse(&omega) * p.translation();
    Twist::from_parts(omega, v)
}

/// Left Jacobian of SE(3) in `(omega, v)` ordering, as a row-major 6x6 matrix.
///
/// `exp(t + d) ~ exp(J d) exp(t)` to first order in `d`.
pub fn se3_left_jacobian<T: Real>(t: &Twist<T>) -> [[T; 6]; 6] {
    let phi = t.omega();
    let rho = t.v();
    let jl = so3_left_jacobian(&phi);
    let q = se3_q_block(&phi, &rho);
    let mut out = [[T::zero(); 6]; 6];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = jl.0[r][c];
            out[r + 3][c + 3] = jl.0[r][c];
            out[r + 3][c] = q.0[r][c];
        }
    }
    out
}

fn se3_q_block<T: Real>(phi: &Vec3<T>, rho: &Vec3<T>) -> Mat3<T> {
    let theta_sq = phi.norm_squared();
    let (c1, c2, c3) = if theta_sq < T::lit(TAYLOR_THETA_SQ) {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        (
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0),
            T::lit(1.0 / 24.0) - t2 / T::lit(720.0) + t4 / T::lit(40320.0),
            T::lit(1.0 / 120.0) - t2 / T::lit(2520.0) + t4 / T::lit(120960.0),
        )
    } else {
        let t = theta_sq.sqrt();
        let (s, c) = (t.sin(), t.cos());
        (
            (t - s) / (theta_sq * t),
            (theta_sq + T::two() * c - T::two()) / (T::two() * theta_sq * theta_sq),
            (T::two() * t - T::lit(3.0) * s + t * c) / (T::two() * theta_sq * theta_sq * t),
        )
    };
    let p = phi.hat();
    let r = rho.hat();
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r.scale(T::half())
        + (pr + rp + prp).scale(c1)
        + (p * pr + rp * p - prp.scale(T::lit(3.0))).scale(c2)
        + (prp * p + p * prp).scale(c3)
}

/// Applies a twist on the left of a base pose: `exp(t) * base`.
pub fn retract<T: Real>(base: &Pose<T>, t: &Twist<T>) -> Pose<T> {
    pose_compose(&se3_exp(t), base)
}

/// Result of projecting a point through a pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection<T> {
    Visible { pixel: [T; 2], depth: T },
    Behind,
}

pub fn project_point<T: Real>(pose: &Pose<T>, k: &Intrinsics<T>, point: &Vec3<T>) -> Projection<T> {
    let pc = pose.to_camera(point);
    if pc.z() <= T::lit(NEAR_PLANE) {
        return Projection::Behind;
    }
    let z = pc.z();
    Projection::Visible { pixel: [k.fx * pc.x() / z + k.cx, k.fy * pc.y() / z + k.cy], depth: z }
}

/// Rotation angle (degrees) and camera-centre distance between two poses.
pub fn pose_error<T: Real>(a: &Pose<T>, b: &Pose<T>) -> (T, T) {
    let rel = a.rotation * b.rotation.conjugate();
    let s = rel.vector().norm();
    let angle = T::two() * s.atan2(rel.w.abs());
    (angle.to_degrees(), (a.center - b.center).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Rotation,
    Translation,
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rotation => "rotation",
            Self::Translation => "translation",
        })
    }
}

/// Single-axis perturbation in the camera frame. Rotation magnitudes are degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation<T> {
    pub kind: PerturbKind,
    pub axis: usize,
    pub magnitude: T,
}

impl<T: Real> Perturbation<T> {
    /// Picks the kind and axis uniformly, then a magnitude uniform in `[-range, range]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, trans_range: T, rot_range_deg: T) -> Self {
        let kind = if rng.gen_bool(0.5) { PerturbKind::Rotation } else { PerturbKind::Translation };
        let axis = rng.gen_range(0..3);
        let range = match kind {
            PerturbKind::Rotation => rot_range_deg,
            PerturbKind::Translation => trans_range,
        };
        let u: f64 = rng.gen_range(-1.0..=1.0);
        Self { kind, axis, magnitude: range * T::lit(u) }
    }

    /// Fixed magnitude with random kind-preserving axis and sign; used by the perturbation grid.
    pub fn with_magnitude<R: Rng + ?Sized>(rng: &mut R, kind: PerturbKind, magnitude: T) -> Self {
        let axis = rng.gen_range(0..3);
        let sign = if rng.gen_bool(0.5) { T::one() } else { -T::one() };
        Self { kind, axis, magnitude: magnitude * sign }
    }

    pub fn apply(&self, pose: &Pose<T>) -> Pose<T> {
        match self.kind {
            PerturbKind::Rotation => {
                let omega = Vec3::unit(self.axis).scale(self.magnitude.to_radians());
                let rotation = (Quat::from_rotation_vector(&omega) * pose.rotation).normalized();
                Pose { rotation, center: pose.center }
            }
            PerturbKind::Translation => {
                let axis_world = pose.rotation.conjugate().rotate(&Vec3::unit(self.axis));
                Pose { rotation: pose.rotation, center: pose.center + axis_world.scale(self.magnitude) }
            }
        }
    }
}

pub fn perturb_pose<T: Real, R: Rng + ?Sized>(pose: &Pose<T>, rng: &mut R, trans_range: T, rot_range_deg: T) -> Pose<T> {
    Perturbation::sample(rng, trans_range, rot_range_deg).apply(pose)
}

/// Boustrophedon survey in front of the `-z` face of `bounds`, cameras looking along `+z`
/// towards the vertical centre line of the box.
///
/// Sweep extents shrink when `steps`/`rows` are small so that consecutive frames stay within
/// `0.08 * standoff` of each other.
pub fn generate_lawnmower_trajectory<T: Real>(
    bounds: &crate::scene::Aabb,
    standoff: T,
    rows: usize,
    steps: usize,
) -> Result<Vec<Pose<T>>, Error> {
    if rows < 1 || steps < 2 || !(standoff > T::zero()) {
        return Err(Error::InvalidTrajectory);
    }
    let lo = bounds.min.map(|c| T::lit(c as f64));
    let hi = bounds.max.map(|c| T::lit(c as f64));
    let center = (lo + hi).scale(T::half());
    let max_step = standoff * T::lit(0.08);
    let width = (hi.x() - lo.x()).min(max_step * T::lit((steps - 1) as f64));
    let height = if rows > 1 { (hi.y() - lo.y()).min(max_step * T::lit((rows - 1) as f64)) } else { T::zero() };
    let z = lo.z() - standoff;
    let down = Vec3::new(T::zero(), T::one(), T::zero());
    let mut poses = Vec::with_capacity(rows * steps);
    for r in 0..rows {
        let fy = if rows > 1 { T::lit(r as f64 / (rows - 1) as f64) - T::half() } else { T::zero() };
        let y = center.y() + height * fy;
        for s in 0..steps {
            let s = if r % 2 == 0 { s } else { steps - 1 - s };
            let fx = T::lit(s as f64 / (steps - 1) as f64) - T::half();
            let eye = Vec3::new(center.x() + width * fx, y, z);
            let target = Vec3::new(center.x(), y, center.z());
            poses.push(Pose::look_at(eye, target, down)?);
        }
    }
    Ok(poses)
}

/// Text form `qw qx qy qz tx ty tz` where `t` is the camera centre.
impl<T: Real> fmt::Display for Pose<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = &self.rotation;
        let c = &self.center;
        write!(f, "{} {} {} {} {} {} {}", q.w, q.x, q.y, q.z, c[0], c[1], c[2])
    }
}

impl<T: Real> FromStr for Pose<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let vals = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map(T::lit).map_err(|_| Error::InvalidPose))
            .collect::<Result<Vec<T>, _>>()?;
        if vals.len() != 7 {
            return Err(Error::InvalidPose);
        }
        let q = Quat::new(vals[0], vals[1], vals[2], vals[3]);
        let n = q.norm();
        if !(n > T::zero()) {
            return Err(Error::InvalidPose);
        }
        Pose::new(q.normalized(), Vec3::new(vals[4], vals[5], vals[6]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Aabb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist<f64> {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let axis = axis.scale(1.0 / axis.norm());
        let omega = axis.scale(rng.gen_range(0.0..max_angle));
        let v = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        Twist::from_parts(omega, v)
    }

    fn pose_max_diff(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
        let q = if a.rotation.dot(&b.rotation) < 0.0 { b.rotation.conjugate().conjugate() } else { b.rotation };
        let sign = if a.rotation.dot(&b.rotation) < 0.0 { -1.0 } else { 1.0 };
        let dq = [a.rotation.w - sign * q.w, a.rotation.x - sign * q.x, a.rotation.y - sign * q.y, a.rotation.z - sign * q.z]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        dq.max((a.center - b.center).max_abs())
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = se3_exp(&Twist::<f64>::zero());
        assert_eq!(p.rotation, Quat::identity());
        assert!(p.center.max_abs() == 0.0);
    }

    #[test]
    fn exp_of_pure_translation() {
        let p = se3_exp(&Twist([0.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        assert_eq!(p.rotation, Quat::identity());
        assert!((p.translation() - Vec3::new(1.0, 2.0, 3.0)).max_abs() < 1e-15);
    }

    #[test]
    fn exp_log_round_trip_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let t = random_twist(&mut rng, 3.0);
            let back = se3_log(&se3_exp(&t));
            worst = worst.max(back.max_abs_diff(&t));
            let p = se3_exp(&t);
            worst = worst.max(pose_max_diff(&se3_exp(&se3_log(&p)), &p));
        }
        assert!(worst < 1e-9, "worst round trip error {worst}");
    }

    #[test]
    fn small_angle_round_trip() {
        for scale in [0.0, 1e-9, 1e-6, 1e-3, 9e-3, 1.1e-2] {
            let t = Twist([scale, -0.5 * scale, 0.3 * scale, 0.2, -0.1, 0.4]);
            assert!(se3_log(&se3_exp(&t)).max_abs_diff(&t) < 1e-12);
        }
    }

    #[test]
    fn compose_and_inverse_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = Pose::identity();
        for _ in 0..200 {
            let a = se3_exp(&random_twist(&mut rng, 3.0));
            let b = se3_exp(&random_twist(&mut rng, 3.0));
            let c = se3_exp(&random_twist(&mut rng, 3.0));
            assert!(pose_max_diff(&pose_compose(&id, &a), &a) < 1e-12);
            assert!(pose_max_diff(&pose_compose(&a, &pose_inverse(&a)), &id) < 1e-9);
            let l = pose_compose(&pose_compose(&a, &b), &c);
            let r = pose_compose(&a, &pose_compose(&b, &c));
            assert!(pose_max_diff(&l, &r) < 1e-9);
        }
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = random_twist(&mut rng, 2.5);
            let j = se3_left_jacobian(&t);
            let base = se3_exp(&t);
            for c in 0..6 {
                let h = 1e-6;
                let mut tp = t;
                tp.0[c] += h;
                let mut tm = t;
                tm.0[c] -= h;
                let dp = se3_log(&pose_compose(&se3_exp(&tp), &pose_inverse(&base)));
                let dm = se3_log(&pose_compose(&se3_exp(&tm), &pose_inverse(&base)));
                for r in 0..6 {
                    let fd = (dp.0[r] - dm.0[r]) / (2.0 * h);
                    assert!((fd - j[r][c]).abs() < 1e-6, "J[{r}][{c}] = {} vs fd {}", j[r][c], fd);
                }
            }
        }
    }

    #[test]
    fn projection_on_axis_and_behind() {
        let k = Intrinsics::centered(150.0, 160, 90).unwrap();
        let pose = Pose::<f64>::identity();
        match project_point(&pose, &k, &Vec3::new(0.0, 0.0, 2.5)) {
            Projection::Visible { pixel, depth } => {
                assert_eq!(pixel, [80.0, 45.0]);
                assert_eq!(depth, 2.5);
            }
            Projection::Behind => panic!("point in front reported behind"),
        }
        assert_eq!(project_point(&pose, &k, &Vec3::new(0.0, 0.0, -1.0)), Projection::Behind);
    }

    #[test]
    fn projection_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = Intrinsics::new(140.0, 151.0, 79.5, 44.0, 160, 90).unwrap();
        for _ in 0..500 {
            let pose = se3_exp(&random_twist(&mut rng, 0.5));
            let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..5.0));
            // oracle: K [R | t] p with R from the quaternion's rotation matrix via explicit loops
            let r = pose.rotation.to_matrix().0;
            let t = pose.translation().0;
            let mut pc = [0.0; 3];
            for i in 0..3 {
                pc[i] = t[i];
                for j in 0..3 {
                    pc[i] += r[i][j] * p.0[j];
                }
            }
            let kmat = [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
            let mut h = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    h[i] += kmat[i][j] * pc[j];
                }
            }
            match project_point(&pose, &k, &p) {
                Projection::Visible { pixel, depth } => {
                    assert!((pixel[0] - h[0] / h[2]).abs() < 1e-9);
                    assert!((pixel[1] - h[1] / h[2]).abs() < 1e-9);
                    assert!((depth - pc[2]).abs() < 1e-12);
                }
                Projection::Behind => assert!(pc[2] <= NEAR_PLANE),
            }
        }
    }

    #[test]
    fn pose_error_identity_and_constructed() {
        let p = se3_exp(&Twist([0.1, 0.2, -0.3, 1.0, 0.0, 2.0]));
        let (deg, tr) = pose_error(&p, &p);
        assert!(deg < 1e-12 && tr == 0.0);
        let rx = Pose { rotation: Quat::from_rotation_vector(&Vec3::new(5f64.to_radians(), 0.0, 0.0)) * p.rotation, center: p.center };
        let (deg, tr) = pose_error(&p, &rx);
        assert!((deg - 5.0).abs() < 1e-9);
        assert_eq!(tr, 0.0);
    }

    #[test]
    fn pose_error_matches_trace_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let a = se3_exp(&random_twist(&mut rng, 3.0));
            let b = se3_exp(&random_twist(&mut rng, 3.0));
            let (deg, tr) = pose_error(&a, &b);
            let rel = a.rotation_matrix() * b.rotation_matrix().transpose();
            let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let oracle = cos.acos().to_degrees();
            // acos is ill-conditioned near 0 and 180 degrees
            let tol = if (1.0..=179.0).contains(&oracle) { 1e-9 } else { 1e-5 };
            assert!((deg - oracle).abs() < tol, "{deg} vs {oracle}");
            let d = a.center - b.center;
            assert!((tr - (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()).abs() < 1e-12);
            let (deg2, tr2) = pose_error(&b, &a);
            assert!((deg - deg2).abs() < 1e-12 && (tr - tr2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_range_perturbation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = se3_exp(&Twist([0.1, 0.2, -0.3, 1.0, 0.0, 2.0]));
        for _ in 0..20 {
            assert_eq!(perturb_pose(&p, &mut rng, 0.0, 0.0), p);
        }
    }

    #[test]
    fn perturbation_touches_one_axis_of_one_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Pose<f64> = se3_exp(&Twist([0.1, 0.2, -0.3, 1.0, 0.0, 2.0]));
        for _ in 0..200 {
            let d = Perturbation::sample(&mut rng, 1.58, 40.0);
            let q = d.apply(&p);
            let (deg, tr) = pose_error(&p, &q);
            match d.kind {
                PerturbKind::Rotation => {
                    assert!((deg - d.magnitude.abs()).abs() < 1e-9 && tr == 0.0);
                    assert!(d.magnitude.abs() <= 40.0);
                }
                PerturbKind::Translation => {
                    assert!(deg < 1e-12 && (tr - d.magnitude.abs()).abs() < 1e-12);
                    assert!(d.magnitude.abs() <= 1.58);
                    // displacement lies along the chosen camera axis
                    let local = p.rotation.rotate(&(q.center - p.center));
                    for a in 0..3 {
                        if a != d.axis {
                            assert!(local[a].abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lawnmower_shapes() {
        let b = Aabb::new([-1.0; 3], [1.0; 3]).unwrap();
        let one_row = generate_lawnmower_trajectory::<f64>(&b, 2.0, 1, 7).unwrap();
        assert_eq!(one_row.len(), 7);
        assert!(one_row.iter().all(|p| (p.center.y() - 0.0).abs() < 1e-12));
        let four = generate_lawnmower_trajectory::<f64>(&b, 2.0, 2, 2).unwrap();
        assert_eq!(four.len(), 4);
        // serpentine: second row starts where the first row ended
        assert!(four[1].center.x() > four[0].center.x());
        assert!((four[2].center.x() - four[1].center.x()).abs() < 1e-12);
        assert!(four[3].center.x() < four[2].center.x());
        assert!(generate_lawnmower_trajectory::<f64>(&b, 2.0, 0, 5).is_err());
        assert!(generate_lawnmower_trajectory::<f64>(&b, 2.0, 1, 1).is_err());
    }

    #[test]
    fn lawnmower_increments_are_bounded() {
        let b = Aabb::new([-1.0, -0.8, -0.5], [1.5, 0.6, 0.9]).unwrap();
        for (standoff, rows, steps) in [(2.0, 1, 2), (2.0, 2, 2), (3.0, 4, 25), (1.0, 5, 40), (0.5, 3, 3)] {
            let path = generate_lawnmower_trajectory::<f64>(&b, standoff, rows, steps).unwrap();
            assert_eq!(path.len(), rows * steps);
            for w in path.windows(2) {
                let (deg, tr) = pose_error(&w[0], &w[1]);
                assert!(deg < 5.0, "rotation step {deg}");
                assert!(tr < standoff / 10.0, "translation step {tr}");
            }
        }
    }

    #[test]
    fn pose_text_round_trip() {
        let p = se3_exp(&Twist([0.1, 0.2, -0.3, 1.0, 0.0, 2.0]));
        let back: Pose<f64> = p.to_string().parse().unwrap();
        assert!(pose_max_diff(&p, &back) < 1e-15);
        assert!("1 0 0".parse::<Pose<f64>>().is_err());
    }
}
