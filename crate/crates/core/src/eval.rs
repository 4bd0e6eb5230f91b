//! Desk-scale studies on synthetic scenes: perturbation sweeps, the compression benchmark and
//! novel-object robustness. Each study is a pure function of its [`StudyConfig`].

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{self, CodecParams};
use crate::encoder::{EncoderMode, EncoderState, InitSource, OdometryEstimator, DEFAULT_MSE_GATE};
use crate::error::{Error, Result};
use crate::geometry::{generate_lawnmower_trajectory, Intrinsics, PerturbKind, Perturbation, Pose};
use crate::image::Image;
use crate::linalg::{Quat, Vec3};
use crate::objectives::{mse, psnr};
use crate::optimize::{OptimOptions, Optimizer};
use crate::protocol::{wire_rounded, HEADER_ONLY_LEN};
use crate::render::{render, Objective};
use crate::scene::{add_novel_object, generate_synthetic_scene, Aabb, Scene, SceneStyle};

const STREAM_PERTURB: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_FRAGMENT: u64 = 3;
const STREAM_ESTIMATOR: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub seed: u64,
    pub scene_count: usize,
    pub scene_style: SceneStyle,
    pub bounds: Aabb,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub standoff: f64,
    pub rows: usize,
    pub steps: usize,
    pub rotation_grid_deg: Vec<f64>,
    /// Fractions of the scene diameter.
    pub translation_grid: Vec<f64>,
    pub trials: usize,
    pub objectives: Vec<Objective>,
    pub optimizers: Vec<Optimizer>,
    /// Codec quality for the perturbation sweep.
    pub quality: u8,
    /// Codec qualities for the benchmark and robustness runs.
    pub qualities: Vec<u8>,
    pub options: OptimOptions<f64>,
    pub mse_gate: f64,
    pub estimator_rot_deg: f64,
    pub estimator_trans: f64,
    /// Standard deviation of additive pixel noise on camera frames.
    pub camera_noise: f64,
    pub novel_count: usize,
    pub psnr_match_tol: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scene_count: 200,
            scene_style: SceneStyle::Scatter,
            bounds: Aabb { min: Vec3([-1.0; 3]), max: Vec3([1.0; 3]) },
            width: 160,
            height: 90,
            focal: 150.0,
            standoff: 2.0,
            rows: 4,
            steps: 25,
            rotation_grid_deg: vec![1.0, 2.0, 5.0, 10.0, 15.0, 25.0, 32.0, 40.0],
            translation_grid: vec![0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            trials: 25,
            objectives: vec![Objective::Mse, Objective::Matching],
            optimizers: vec![Optimizer::Bfgs],
            quality: 75,
            qualities: vec![50, 75, 90],
            options: OptimOptions::default(),
            mse_gate: DEFAULT_MSE_GATE,
            estimator_rot_deg: 2.0,
            estimator_trans: 0.0,
            camera_noise: 0.0,
            novel_count: 30,
            psnr_match_tol: 0.5,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.trials < 1 {
            return bad("trials must be at least 1");
        }
        if self.rotation_grid_deg.is_empty() && self.translation_grid.is_empty() {
            return bad("perturbation grids are empty");
        }
        if self.rotation_grid_deg.iter().chain(&self.translation_grid).any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("perturbation magnitudes must be finite and non-negative");
        }
        if self.objectives.is_empty() || self.optimizers.is_empty() || self.qualities.is_empty() {
            return bad("objective, optimizer and quality lists must be non-empty");
        }
        for q in self.qualities.iter().chain(std::iter::once(&self.quality)) {
            CodecParams::lossy(*q).validate()?;
        }
        if !(self.camera_noise >= 0.0 && self.camera_noise.is_finite()) {
            return bad("camera noise must be finite and non-negative");
        }
        if !(self.psnr_match_tol > 0.0) || !(self.mse_gate > 0.0) {
            return bad("tolerances must be positive");
        }
        self.bounds.validate()?;
        self.options.validate()?;
        OdometryEstimator::new(self.estimator_rot_deg, self.estimator_trans, 0)?;
        self.intrinsics()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics<f64>> {
        Intrinsics::centered(self.focal, self.width, self.height)
    }

    pub fn prior(&self) -> Result<Scene> {
        generate_synthetic_scene(self.seed, self.scene_count, &self.bounds, self.scene_style)
    }

    /// Lawnmower poses snapped to what the packet format can carry, so an unperturbed frame
    /// is an exact fixed point of the pipeline.
    pub fn trajectory(&self) -> Result<Vec<Pose<f64>>> {
        Ok(generate_lawnmower_trajectory(&self.bounds, self.standoff, self.rows, self.steps)?
            .iter()
            .map(wire_rounded)
            .collect())
    }

    pub fn estimator(&self) -> Result<OdometryEstimator> {
        let seed = stream(self.seed, STREAM_ESTIMATOR, 0).gen();
        OdometryEstimator::new(self.estimator_rot_deg, self.estimator_trans, seed)
    }

    /// The novel fragment, centred on the origin; see [`StudyConfig::fragment_placement`].
    pub fn fragment(&self) -> Result<Vec<crate::scene::Gaussian3D>> {
        if self.novel_count == 0 {
            return Ok(Vec::new());
        }
        let seed = stream(self.seed, STREAM_FRAGMENT, 0).gen();
        let half = (self.bounds.diameter() * 0.1) as f32;
        let b = Aabb::new([-half; 3], [half; 3])?;
        Ok(generate_synthetic_scene(seed, self.novel_count, &b, SceneStyle::Scatter)?.gaussians)
    }

    /// Centre of the scene's camera-facing face.
    pub fn fragment_placement(&self) -> Pose<f64> {
        let c = self.bounds.center();
        let t = Vec3::new(c[0] as f64, c[1] as f64, self.bounds.min.0[2] as f64);
        Pose::from_transform(Quat::identity(), t)
    }

    fn world_with_fragment(&self, prior: &Scene) -> Result<Scene> {
        add_novel_object(prior, &self.fragment()?, &self.fragment_placement())
    }

    /// Ground-truth camera frame: a render of `world`, plus pixel noise drawn from the
    /// frame's own stream, clamped to `[0, 1]`.
    pub fn camera_frame(&self, world: &Scene, pose: &Pose<f64>, noise_index: u64) -> Result<Image<f64>> {
        let mut img = render(world, pose, &self.intrinsics()?)?;
        if self.camera_noise > 0.0 {
            let normal = Normal::new(0.0, self.camera_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut rng = stream(self.seed, STREAM_NOISE, noise_index);
            for v in &mut img.data {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        Ok(img)
    }

    fn encoder(&self, prior: Arc<Scene>, mode: EncoderMode, objective: Objective, optimizer: Optimizer) -> Result<EncoderState> {
        let mut st = EncoderState::new(prior, self.intrinsics()?);
        st.mode = mode;
        st.objective = objective;
        st.optimizer = optimizer;
        st.options = self.options;
        st.mse_gate = self.mse_gate;
        Ok(st)
    }
}

fn stream(seed: u64, study: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(study << 48 | index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbRow {
    pub axis_kind: PerturbKind,
    /// Degrees for rotation, scene-diameter fraction for translation.
    pub magnitude: f64,
    pub trial: usize,
    pub objective: Objective,
    pub optimizer: Optimizer,
    pub psnr_db: f64,
    pub residual_energy: f64,
    pub compressed_bytes: usize,
    pub iterations: usize,
    pub failed: bool,
}

/// Sweeps every grid cell with `trials` paired trials: trial `i` uses the same trajectory pose,
/// axis and sign in every cell of its kind, and the same frame for every objective/optimizer.
pub fn run_perturbation_study(cfg: &StudyConfig) -> Result<Vec<PerturbRow>> {
    cfg.validate()?;
    let prior = Arc::new(cfg.prior()?);
    let poses = cfg.trajectory()?;
    let diameter = cfg.bounds.diameter();

    let mut jobs = Vec::new();
    for (ki, (kind, grid)) in [(PerturbKind::Rotation, &cfg.rotation_grid_deg), (PerturbKind::Translation, &cfg.translation_grid)]
        .into_iter()
        .enumerate()
    {
        for &magnitude in grid {
            for trial in 0..cfg.trials {
                for &objective in &cfg.objectives {
                    for &optimizer in &cfg.optimizers {
                        jobs.push((ki as u64, kind, magnitude, trial, objective, optimizer));
                    }
                }
            }
        }
    }

    let rows = jobs
        .into_par_iter()
        .map(|(ki, kind, magnitude, trial, objective, optimizer)| {
            let mut rng = stream(cfg.seed, STREAM_PERTURB, ki << 32 | trial as u64);
            let index = rng.gen_range(0..poses.len());
            let pose = poses[index];
            let units = match kind {
                PerturbKind::Rotation => magnitude,
                PerturbKind::Translation => magnitude * diameter,
            };
            let init = Perturbation::with_magnitude(&mut rng, kind, units).apply(&pose);
            let mut row = PerturbRow {
                axis_kind: kind,
                magnitude,
                trial,
                objective,
                optimizer,
                psnr_db: f64::NAN,
                residual_energy: f64::NAN,
                compressed_bytes: 0,
                iterations: 0,
                failed: true,
            };
            let outcome = cfg.camera_frame(&prior, &pose, index as u64).and_then(|camera| {
                cfg.encoder(prior.clone(), EncoderMode::Invs, objective, optimizer)?.encode_frame(&camera, &init, cfg.quality)
            });
            if let Ok(enc) = outcome {
                row.psnr_db = enc.stats.psnr_rendered;
                row.residual_energy = enc.stats.residual_energy;
                row.compressed_bytes = enc.residual_bytes().len();
                row.iterations = enc.stats.iterations;
                row.failed = enc.stats.optimizer_failed;
            }
            row
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    NoOpt,
    Invs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Clean,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub scenario: Scenario,
    pub method: Method,
    pub quality: u8,
    pub frame: usize,
    pub bytes: usize,
    pub psnr_db: f64,
    pub iterations: usize,
    pub init_source: Option<InitSource>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub quality: u8,
    pub frames: usize,
    /// Raw RGB frame bytes over mean packet bytes.
    pub compression_ratio: f64,
    pub mean_bytes: f64,
    pub mean_psnr: f64,
    pub failures: usize,
}

/// The direct codec at the quality whose mean PSNR lands closest to an iNVS row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedRow {
    pub quality: u8,
    pub invs_bytes: f64,
    pub invs_psnr: f64,
    pub direct_quality: Option<u8>,
    pub direct_bytes: Option<f64>,
    pub direct_psnr: Option<f64>,
    pub ratio_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    pub matched: Vec<MatchedRow>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustRow {
    pub scenario: Scenario,
    pub method: Method,
    pub quality: u8,
    pub frames: usize,
    pub compression_ratio: f64,
    pub mean_bytes: f64,
    pub mean_psnr: f64,
    pub failures: usize,
    pub previous_frame_inits: usize,
    pub estimator_inits: usize,
    pub optimizer_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub rows: Vec<RobustRow>,
    pub frames: Vec<FrameRecord>,
}

struct Sequence {
    cameras: Vec<Image<f64>>,
    records: Vec<FrameRecord>,
}

/// Runs all three methods over the trajectory with cameras rendered from `world` and the
/// encoder holding `prior`.
fn run_sequence(cfg: &StudyConfig, prior: Arc<Scene>, world: &Scene, scenario: Scenario) -> Result<Sequence> {
    let poses = cfg.trajectory()?;
    let estimator = cfg.estimator()?;
    let objective = cfg.objectives[0];
    let optimizer = cfg.optimizers[0];
    let cameras = poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| cfg.camera_frame(world, p, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<Pose<f64>> = poses.iter().enumerate().map(|(i, p)| estimator.estimate_pose(p, i as u64)).collect();

    let mut records = Vec::new();
    let failed = |method, quality, frame| FrameRecord {
        scenario,
        method,
        quality,
        frame,
        bytes: 0,
        psnr_db: f64::NAN,
        iterations: 0,
        init_source: None,
        failed: true,
    };

    let mut invs = cfg.encoder(prior.clone(), EncoderMode::Invs, objective, optimizer)?;
    for (i, camera) in cameras.iter().enumerate() {
        match invs.encode_frame_at(camera, &estimates[i], &cfg.qualities) {
            Ok(encs) => records.extend(encs.iter().zip(&cfg.qualities).map(|(e, &quality)| FrameRecord {
                scenario,
                method: Method::Invs,
                quality,
                frame: i,
                bytes: e.stats.bytes_total,
                psnr_db: e.stats.psnr_reconstructed,
                iterations: e.stats.iterations,
                init_source: Some(e.init_source),
                failed: e.stats.optimizer_failed,
            })),
            Err(_) => {
                // keep the stream position consistent with a transmitted frame
                invs.prev_good = false;
                invs.frame_index = invs.frame_index.wrapping_add(1);
                records.extend(cfg.qualities.iter().map(|&q| failed(Method::Invs, q, i)));
            }
        }
    }

    let base = cfg.encoder(prior, EncoderMode::NoOpt, objective, optimizer)?;
    let no_opt: Vec<Vec<FrameRecord>> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, camera)| {
            let mut st = base.clone();
            st.frame_index = i as u32;
            match st.encode_frame_at(camera, &estimates[i], &cfg.qualities) {
                Ok(encs) => encs
                    .iter()
                    .zip(&cfg.qualities)
                    .map(|(e, &quality)| FrameRecord {
                        scenario,
                        method: Method::NoOpt,
                        quality,
                        frame: i,
                        bytes: e.stats.bytes_total,
                        psnr_db: e.stats.psnr_reconstructed,
                        iterations: 0,
                        init_source: Some(InitSource::Estimator),
                        failed: false,
                    })
                    .collect(),
                Err(_) => cfg.qualities.iter().map(|&q| failed(Method::NoOpt, q, i)).collect(),
            }
        })
        .collect();
    records.extend(no_opt.into_iter().flatten());

    for &quality in &cfg.qualities {
        let direct: Vec<FrameRecord> = cameras
            .par_iter()
            .enumerate()
            .map(|(i, camera)| match direct_frame(camera, quality) {
                Ok((bytes, psnr_db)) => FrameRecord {
                    scenario,
                    method: Method::Direct,
                    quality,
                    frame: i,
                    bytes,
                    psnr_db,
                    iterations: 0,
                    init_source: None,
                    failed: false,
                },
                Err(_) => failed(Method::Direct, quality, i),
            })
            .collect();
        records.extend(direct);
    }
    records.sort_by_key(|r| (r.method, r.quality, r.frame));
    Ok(Sequence { cameras, records })
}

/// Packet bytes (codec stream plus the same framing an iNVS packet pays) and PSNR of the
/// decoded frame.
fn direct_frame(camera: &Image<f64>, quality: u8) -> Result<(usize, f64)> {
    let bytes = codec::encode_image_direct(camera, &CodecParams::lossy(quality))?;
    let decoded: Image<f64> = codec::decode_image_direct(&bytes)?;
    Ok((bytes.len() + HEADER_ONLY_LEN, psnr(mse(camera, &decoded)?)?))
}

struct Summary {
    frames: usize,
    mean_bytes: f64,
    mean_psnr: f64,
    failures: usize,
    previous_frame_inits: usize,
    estimator_inits: usize,
    optimizer_failures: usize,
}

fn summarize(records: &[FrameRecord]) -> BTreeMap<(Method, u8), Summary> {
    let mut groups: BTreeMap<(Method, u8), Vec<&FrameRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.quality)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let ok: Vec<_> = rs.iter().filter(|r| r.bytes > 0).collect();
            let n = ok.len().max(1) as f64;
            let summary = Summary {
                frames: rs.len(),
                mean_bytes: ok.iter().map(|r| r.bytes as f64).sum::<f64>() / n,
                mean_psnr: ok.iter().map(|r| r.psnr_db).sum::<f64>() / n,
                failures: rs.len() - ok.len(),
                previous_frame_inits: rs.iter().filter(|r| r.init_source == Some(InitSource::PreviousFrame)).count(),
                estimator_inits: rs.iter().filter(|r| r.init_source == Some(InitSource::Estimator)).count(),
                optimizer_failures: rs.iter().filter(|r| r.failed && r.bytes > 0).count(),
            };
            (key, summary)
        })
        .collect()
}

fn raw_bytes(cfg: &StudyConfig) -> f64 {
    (cfg.width * cfg.height * 3) as f64
}

/// Mean direct-codec bytes and PSNR over `cameras` at each probed quality.
struct DirectSearch<'a> {
    cameras: &'a [Image<f64>],
    memo: BTreeMap<u8, (f64, f64)>,
}

impl DirectSearch<'_> {
    fn at(&mut self, q: u8) -> Result<(f64, f64)> {
        if let Some(v) = self.memo.get(&q) {
            return Ok(*v);
        }
        let per = self.cameras.par_iter().map(|c| direct_frame(c, q)).collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        let v = (per.iter().map(|p| p.0 as f64).sum::<f64>() / n, per.iter().map(|p| p.1).sum::<f64>() / n);
        self.memo.insert(q, v);
        Ok(v)
    }

    /// Cheapest quality whose mean PSNR is within `tol` of `target`, assuming PSNR grows
    /// with quality.
    fn matching(&mut self, target: f64, tol: f64) -> Result<Option<(u8, f64, f64)>> {
        let (mut lo, mut hi) = (1u8, 100u8);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.at(mid)?.1 >= target - tol {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let mut best: Option<(u8, f64, f64)> = None;
        for q in lo.saturating_sub(1).max(1)..=lo.saturating_add(2).min(100) {
            let (bytes, p) = self.at(q)?;
            if (p - target).abs() <= tol && best.is_none_or(|b| bytes < b.1) {
                best = Some((q, bytes, p));
            }
        }
        Ok(best)
    }
}

pub fn run_compression_benchmark(cfg: &StudyConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let prior = Arc::new(cfg.prior()?);
    let seq = run_sequence(cfg, prior.clone(), &prior, Scenario::Clean)?;
    let summary = summarize(&seq.records);
    let rows: Vec<BenchRow> = summary
        .iter()
        .map(|(&(method, quality), s)| BenchRow {
            method,
            quality,
            frames: s.frames,
            compression_ratio: raw_bytes(cfg) / s.mean_bytes,
            mean_bytes: s.mean_bytes,
            mean_psnr: s.mean_psnr,
            failures: s.failures,
        })
        .collect();

    let mut search = DirectSearch { cameras: &seq.cameras, memo: BTreeMap::new() };
    let mut matched = Vec::new();
    for r in rows.iter().filter(|r| r.method == Method::Invs) {
        let hit = search.matching(r.mean_psnr, cfg.psnr_match_tol)?;
        matched.push(MatchedRow {
            quality: r.quality,
            invs_bytes: r.mean_bytes,
            invs_psnr: r.mean_psnr,
            direct_quality: hit.map(|h| h.0),
            direct_bytes: hit.map(|h| h.1),
            direct_psnr: hit.map(|h| h.2),
            ratio_gain: hit.map(|h| h.1 / r.mean_bytes),
        });
    }
    Ok(BenchmarkReport { rows, matched, frames: seq.records })
}

/// Runs the trajectory twice with the encoder holding the plain prior: once with camera
/// frames from that prior and once from the prior plus the novel fragment.
pub fn run_robustness_study(cfg: &StudyConfig) -> Result<RobustnessReport> {
    cfg.validate()?;
    let prior = Arc::new(cfg.prior()?);
    let world = cfg.world_with_fragment(&prior)?;
    let mut rows = Vec::new();
    let mut frames = Vec::new();
    for (scenario, world) in [(Scenario::Clean, &*prior), (Scenario::Novel, &world)] {
        let seq = run_sequence(cfg, prior.clone(), world, scenario)?;
        for ((method, quality), s) in summarize(&seq.records) {
            rows.push(RobustRow {
                scenario,
                method,
                quality,
                frames: s.frames,
                compression_ratio: raw_bytes(cfg) / s.mean_bytes,
                mean_bytes: s.mean_bytes,
                mean_psnr: s.mean_psnr,
                failures: s.failures,
                previous_frame_inits: s.previous_frame_inits,
                estimator_inits: s.estimator_inits,
                optimizer_failures: s.optimizer_failures,
            });
        }
        frames.extend(seq.records);
    }
    Ok(RobustnessReport { rows, frames })
}

/// Writes `rows` as CSV with a header row.
pub fn write_csv<S: Serialize, W: Write>(rows: &[S], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Median of the finite-or-infinite values in `xs`, skipping NaN. `None` when nothing is left.
pub fn median(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = xs.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StudyConfig {
        StudyConfig {
            rotation_grid_deg: vec![0.0, 2.0],
            translation_grid: vec![0.01],
            trials: 2,
            objectives: vec![Objective::Mse],
            rows: 1,
            steps: 4,
            qualities: vec![50],
            ..StudyConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        let mut c = small();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.rotation_grid_deg.clear();
        c.translation_grid.clear();
        assert!(c.validate().is_err());
        let mut c = small();
        c.qualities = vec![0];
        assert!(c.validate().is_err());
        let mut c = small();
        c.translation_grid = vec![f64::NAN];
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_magnitude_is_a_fixed_point() {
        let cfg = StudyConfig { translation_grid: vec![], ..small() };
        let rows = run_perturbation_study(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * cfg.trials);
        let zero = codec::residual_quantize(&Image::<f64>::filled(160, 90, [0.0; 3])).unwrap();
        let floor = codec::encode(&zero, &CodecParams::lossy(cfg.quality)).unwrap().len();
        for r in rows.iter().filter(|r| r.magnitude == 0.0) {
            assert_eq!(r.psnr_db, f64::INFINITY);
            assert_eq!(r.iterations, 0);
            assert_eq!(r.compressed_bytes, floor);
            assert!(!r.failed);
        }
    }

    #[test]
    fn perturbation_rows_cover_the_grid_and_repeat() {
        let cfg = small();
        let a = run_perturbation_study(&cfg).unwrap();
        assert_eq!(a.len(), 3 * cfg.trials);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_csv(&a, &mut x).unwrap();
        write_csv(&run_perturbation_study(&cfg).unwrap(), &mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("axis_kind,magnitude,trial,objective,optimizer,psnr_db,residual_energy,compressed_bytes,iterations,failed\n"));
        assert_eq!(text.lines().count(), a.len() + 1);
    }

    #[test]
    fn benchmark_shape() {
        let cfg = StudyConfig { qualities: vec![30, 80], ..small() };
        let rep = run_compression_benchmark(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 3 * 2);
        assert_eq!(rep.frames.len(), 3 * 2 * cfg.rows * cfg.steps);
        assert_eq!(rep.matched.len(), 2);
        for r in &rep.rows {
            assert_eq!(r.frames, 4);
            assert!((r.compression_ratio * r.mean_bytes - 160.0 * 90.0 * 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_fragment_reproduces_the_clean_run() {
        let cfg = StudyConfig { novel_count: 0, ..small() };
        let rep = run_robustness_study(&cfg).unwrap();
        let (clean, novel): (Vec<_>, Vec<_>) = rep.rows.iter().partition(|r| r.scenario == Scenario::Clean);
        assert_eq!(clean.len(), novel.len());
        for (a, b) in clean.iter().zip(&novel) {
            assert_eq!((a.method, a.quality, a.mean_bytes.to_bits(), a.mean_psnr.to_bits()), (b.method, b.quality, b.mean_bytes.to_bits(), b.mean_psnr.to_bits()));
            assert_eq!((a.previous_frame_inits, a.estimator_inits), (b.previous_frame_inits, b.estimator_inits));
        }
    }

    #[test]
    fn camera_noise_is_seeded_per_frame() {
        let cfg = StudyConfig { camera_noise: 0.01, ..small() };
        let prior = cfg.prior().unwrap();
        let pose = cfg.trajectory().unwrap()[0];
        let a = cfg.camera_frame(&prior, &pose, 3).unwrap();
        assert_eq!(a, cfg.camera_frame(&prior, &pose, 3).unwrap());
        assert_ne!(a, cfg.camera_frame(&prior, &pose, 4).unwrap());
        let clean = render(&prior, &pose, &cfg.intrinsics().unwrap()).unwrap();
        let m = mse(&a, &clean).unwrap();
        assert!(m > 0.5e-4 && m < 1.1e-4, "{m}");
    }

    #[test]
    fn median_values() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([f64::INFINITY, f64::INFINITY]), Some(f64::INFINITY));
        assert_eq!(median([f64::NAN]), None);
    }
}
