//! The shared scene prior: anisotropic 3D Gaussians, synthetic scene generation, the binary
//! scene file format and novel-object injection.
//!
//! Scene data is stored in `f32` because that is what the file format carries; the renderer
//! widens it to its working precision.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::{Mat3, Quat, Vec3};
use crate::scalar::Real;

pub const SCENE_MAGIC: &[u8; 4] = b"GSC1";
const FLOATS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: [f32; 3],
    /// Per-axis standard deviations.
    pub scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub color: [f32; 3],
    pub opacity: f32,
}

impl Gaussian3D {
    pub fn validate(&self) -> Result<()> {
        let q = self.rotation.map(f64::from);
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::InvariantViolation(format!("quaternion norm {norm}")));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvariantViolation("scale must be positive".into()));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvariantViolation("color outside [0,1]".into()));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvariantViolation("opacity outside (0,1]".into()));
        }
        if !self.mean.iter().all(|m| m.is_finite()) {
            return Err(Error::InvariantViolation("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn mean_vec<T: Real>(&self) -> Vec3<T> {
        Vec3(self.mean.map(T::from_f32_exact))
    }

    pub fn quat<T: Real>(&self) -> Quat<T> {
        let [w, x, y, z] = self.rotation.map(T::from_f32_exact);
        Quat::new(w, x, y, z)
    }

    /// World-frame covariance `R S^2 R^T`.
    pub fn covariance<T: Real>(&self) -> Mat3<T> {
        let r = self.quat::<T>().normalized().to_matrix();
        let [sx, sy, sz] = self.scale.map(T::from_f32_exact);
        r * Mat3::diag(sx * sx, sy * sy, sz * sz) * r.transpose()
    }
}

/// Axis-aligned box with `min < max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3<f32>,
    pub max: Vec3<f32>,
}

impl Aabb {
    pub fn new(min: [f32; 3], max: [f32; 3]) -> Result<Self> {
        let b = Self { min: Vec3(min), max: Vec3(max) };
        b.validate()?;
        Ok(b)
    }

    pub fn unit() -> Self {
        Self { min: Vec3([0.0; 3]), max: Vec3([1.0; 3]) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i]);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBounds)
        }
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> [f32; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn center(&self) -> [f32; 3] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]), 0.5 * (self.min[2] + self.max[2])]
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.extent().iter().map(|e| f64::from(*e).powi(2)).sum::<f64>().sqrt()
    }

    pub fn union_point(&self, p: &[f32; 3]) -> Self {
        let mut b = *self;
        for i in 0..3 {
            b.min[i] = b.min[i].min(p[i]);
            b.max[i] = b.max[i].max(p[i]);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub background: [f32; 3],
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>, background: [f32; 3], bounds: Aabb) -> Result<Self> {
        let s = Self { gaussians, background, bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::InvariantViolation("background outside [0,1]".into()));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate()?;
            if !self.bounds.contains(&g.mean) {
                return Err(Error::InvariantViolation(format!("gaussian {i} mean outside bounds")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneStyle {
    Scatter,
    Lattice,
    BarrelStructure,
}

impl FromStr for SceneStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatter" => Ok(Self::Scatter),
            "lattice" => Ok(Self::Lattice),
            "barrel-structure" | "barrel" => Ok(Self::BarrelStructure),
            other => Err(Error::InvalidConfig(format!("unknown scene style {other:?}"))),
        }
    }
}

pub const DEFAULT_BACKGROUND: [f32; 3] = [0.05, 0.18, 0.27];

fn random_rotation(rng: &mut ChaCha8Rng) -> [f32; 4] {
    // Shoemake's uniform quaternion
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos(), b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos()];
    normalize_f32(q)
}

fn normalize_f32(q: [f64; 4]) -> [f32; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| (v / n) as f32)
}

fn clamp_into(b: &Aabb, p: [f64; 3]) -> [f32; 3] {
    let mut out = [0f32; 3];
    for i in 0..3 {
        out[i] = (p[i] as f32).clamp(b.min[i], b.max[i]);
    }
    out
}

/// Deterministic synthetic scene. The same `(seed, count, bounds, style)` always yields
/// bitwise-identical output.
pub fn generate_synthetic_scene(seed: u64, count: usize, bounds: &Aabb, style: SceneStyle) -> Result<Scene> {
    if count == 0 {
        return Err(Error::EmptyScene);
    }
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = bounds.extent().map(f64::from);
    let lo = bounds.min.0.map(f64::from);
    let size = (ext[0] + ext[1] + ext[2]) / 3.0;
    let mut gaussians = Vec::with_capacity(count);
    match style {
        SceneStyle::Scatter => {
            for _ in 0..count {
                let mean = [0, 1, 2].map(|i| lo[i] + ext[i] * rng.gen::<f64>());
                let scale = [0, 1, 2].map(|_| (size * rng.gen_range(0.04..0.11)) as f32);
                gaussians.push(Gaussian3D {
                    mean: clamp_into(bounds, mean),
                    scale,
                    rotation: random_rotation(&mut rng),
                    color: [0, 1, 2].map(|_| rng.gen_range(0.05f32..0.95)),
                    opacity: rng.gen_range(0.55f32..0.95),
                });
            }
        }
        SceneStyle::Lattice => {
            let side = (count as f64).cbrt().ceil().max(1.0) as usize;
            let cell = [0, 1, 2].map(|i| ext[i] / side as f64);
            for n in 0..count {
                let idx = [n % side, (n / side) % side, n / (side * side)];
                let mean = [0, 1, 2].map(|i| lo[i] + cell[i] * (idx[i] as f64 + 0.5 + rng.gen_range(-0.2..0.2)));
                let scale = [0, 1, 2].map(|i| (cell[i] * rng.gen_range(0.25..0.45)) as f32);
                // smooth colour ramp across the lattice plus jitter
                let ramp = [0, 1, 2].map(|i| (idx[i] as f32 + 0.5) / side as f32);
                let color = [0, 1, 2].map(|i| (0.15 + 0.7 * ramp[i] + rng.gen_range(-0.1f32..0.1)).clamp(0.0, 1.0));
                gaussians.push(Gaussian3D {
                    mean: clamp_into(bounds, mean),
                    scale,
                    rotation: random_rotation(&mut rng),
                    color,
                    opacity: rng.gen_range(0.6f32..0.95),
                });
            }
        }
        SceneStyle::BarrelStructure => barrel_structure(&mut rng, count, bounds, &mut gaussians),
    }
    Scene::new(gaussians, DEFAULT_BACKGROUND, *bounds)
}

/// Six vertical piles on a 3x2 footprint joined by horizontal pipes. The vertical axis is
/// world `y`.
fn barrel_structure(rng: &mut ChaCha8Rng, count: usize, bounds: &Aabb, out: &mut Vec<Gaussian3D>) {
    let ext = bounds.extent().map(f64::from);
    let lo = bounds.min.0.map(f64::from);
    let piles: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let (ix, iz) = (k % 3, k / 3);
            [lo[0] + ext[0] * (0.2 + 0.3 * ix as f64), lo[2] + ext[2] * (0.3 + 0.4 * iz as f64)]
        })
        .collect();
    // pipes between horizontally and depth-adjacent piles
    let pipes: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)];
    let radius = 0.07 * ext[0].min(ext[2]);
    let pile_colors = [[0.62f32, 0.6, 0.55], [0.7, 0.45, 0.3], [0.5, 0.55, 0.6]];
    let pipe_color = [0.85f32, 0.75, 0.2];
    let n_piles = (count * 3).div_ceil(5);
    for n in 0..count {
        let (mean, scale, color) = if n < n_piles {
            let k = n % piles.len();
            let [px, pz] = piles[k];
            let theta = rng.gen_range(0.0..2.0 * PI);
            let y = lo[1] + ext[1] * rng.gen_range(0.05..0.95);
            let mean = [px + radius * theta.cos(), y, pz + radius * theta.sin()];
            let s = radius * rng.gen_range(0.5..0.9);
            // elongated along the pile
            let scale = [s as f32, (s * rng.gen_range(1.5..3.0)) as f32, s as f32];
            // banded colour down the pile gives vertical texture
            let band = ((y - lo[1]) / ext[1] * 5.0).floor() as usize;
            let base = pile_colors[(k + band) % pile_colors.len()];
            let color = base.map(|c| (c + rng.gen_range(-0.08f32..0.08)).clamp(0.0, 1.0));
            (mean, scale, color)
        } else {
            let (a, b) = pipes[n % pipes.len()];
            let level = [0.3, 0.7][(n / pipes.len()) % 2];
            let t = rng.gen_range(0.0..1.0);
            let [ax, az] = piles[a];
            let [bx, bz] = piles[b];
            let y = lo[1] + ext[1] * level + radius * rng.gen_range(-0.3..0.3);
            let mean = [ax + (bx - ax) * t, y, az + (bz - az) * t];
            let len = ((bx - ax).powi(2) + (bz - az).powi(2)).sqrt();
            let along = (len / 8.0).max(radius);
            let s = radius * rng.gen_range(0.35..0.6);
            let scale = if (bx - ax).abs() > (bz - az).abs() {
                [along as f32, s as f32, s as f32]
            } else {
                [s as f32, s as f32, along as f32]
            };
            let color = pipe_color.map(|c| (c + rng.gen_range(-0.1f32..0.1)).clamp(0.0, 1.0));
            (mean, scale, color)
        };
        // small random tilt keeps the covariances generic
        let tilt = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
        let q = Quat::from_rotation_vector(&Vec3(tilt));
        out.push(Gaussian3D {
            mean: clamp_into(bounds, mean),
            scale,
            rotation: normalize_f32([q.w, q.x, q.y, q.z]),
            color,
            opacity: rng.gen_range(0.7f32..0.98),
        });
    }
}

/// Writes the `GSC1` binary form.
pub fn save_scene<W: Write>(scene: &Scene, mut w: W) -> Result<()> {
    w.write_all(&scene_to_bytes(scene))?;
    Ok(())
}

pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + scene.len() * FLOATS_PER_GAUSSIAN * 4 + 36);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for g in &scene.gaussians {
        g.mean.iter().chain(&g.scale).chain(&g.rotation).chain(&g.color).for_each(|v| put(*v));
        put(g.opacity);
    }
    scene.background.iter().for_each(|v| put(*v));
    scene.bounds.min.0.iter().chain(scene.bounds.max.0.iter()).for_each(|v| put(*v));
    out
}

pub fn load_scene<R: Read>(mut r: R) -> Result<Scene> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    scene_from_bytes(&bytes)
}

pub fn scene_from_bytes(bytes: &[u8]) -> Result<Scene> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedScene(bytes.len()));
    }
    if &bytes[..4] != SCENE_MAGIC {
        return Err(Error::MalformedScene);
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedScene(bytes.len()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(FLOATS_PER_GAUSSIAN * 4)
        .and_then(|n| n.checked_add(8 + 9 * 4))
        .ok_or(Error::MalformedScene)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedScene(bytes.len()));
    }
    if bytes.len() > expected {
        return Err(Error::MalformedScene);
    }
    let mut off = 8;
    let mut next = || {
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        v
    };
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let mean = [next(), next(), next()];
        let scale = [next(), next(), next()];
        let rotation = [next(), next(), next(), next()];
        let color = [next(), next(), next()];
        let opacity = next();
        gaussians.push(Gaussian3D { mean, scale, rotation, color, opacity });
    }
    let background = [next(), next(), next()];
    let min = [next(), next(), next()];
    let max = [next(), next(), next()];
    let bounds = Aabb { min: Vec3(min), max: Vec3(max) };
    Scene::new(gaussians, background, bounds)
}

/// Returns a copy of `scene` with `fragment` rigidly moved by `placement` (as the transform
/// `x -> R x + t`) and appended. Bounds grow to contain the moved fragment.
pub fn add_novel_object(scene: &Scene, fragment: &[Gaussian3D], placement: &Pose<f64>) -> Result<Scene> {
    let rq = placement.rotation;
    let t = placement.translation();
    let mut bounds = scene.bounds;
    let mut gaussians = scene.gaussians.clone();
    for g in fragment {
        let m = rq.rotate(&g.mean_vec::<f64>()) + t;
        let mean = m.0.map(|v| v as f32);
        let q = (rq * g.quat::<f64>()).normalized();
        bounds = bounds.union_point(&mean);
        gaussians.push(Gaussian3D { mean, rotation: normalize_f32([q.w, q.x, q.y, q.z]), ..*g });
    }
    Scene::new(gaussians, scene.background, bounds)
}
