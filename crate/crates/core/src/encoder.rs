//! Per-frame encoder: pick an initial pose, refine it through the renderer, code the residual
//! and emit a packet.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{self, CodecMode, CodecParams};
use crate::error::{Error, Result};
use crate::geometry::{retract, Intrinsics, Pose, Twist};
use crate::image::Image;
use crate::linalg::{Quat, Vec3};
use crate::objectives::{mse, psnr, MatchConfig};
use crate::optimize::{OptimError, OptimOptions, Optimizer, Termination};
use crate::protocol::{pose_from_wire, pose_to_wire, reconstruct, serialize_packet, FramePacket};
use crate::render::{loss_and_grad, render, Objective};
use crate::scene::Scene;

pub const DEFAULT_MSE_GATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Optimize the pose before coding the residual.
    Invs,
    /// Use the estimator pose as is.
    NoOpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    PreviousFrame,
    Estimator,
}

impl std::fmt::Display for InitSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PreviousFrame => "previous_frame",
            Self::Estimator => "estimator",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub prior: Arc<Scene>,
    pub intrinsics: Intrinsics<f64>,
    pub prev_pose: Option<Pose<f64>>,
    pub prev_good: bool,
    pub frame_index: u32,
    pub mse_gate: f64,
    pub mode: EncoderMode,
    pub objective: Objective,
    pub optimizer: Optimizer,
    pub options: OptimOptions<f64>,
    pub match_cfg: MatchConfig,
    pub codec_mode: CodecMode,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FrameStats {
    pub iterations: usize,
    pub function_evals: usize,
    /// Mean squared residual before coding.
    pub residual_energy: f64,
    pub psnr_rendered: f64,
    pub psnr_reconstructed: f64,
    pub bytes_total: usize,
    pub initial_loss: f64,
    /// The optimizer failed and the initial pose was transmitted instead.
    pub optimizer_failed: bool,
    pub converged_by: Option<Termination>,
}

#[derive(Debug, Clone)]
pub struct FrameEncoding {
    /// The pose as the decoder will see it.
    pub pose: Pose<f64>,
    pub init_source: InitSource,
    pub packet: FramePacket,
    pub packet_bytes: Vec<u8>,
    pub rendered: Image<f64>,
    pub reconstructed: Image<f64>,
    pub stats: FrameStats,
}

impl FrameEncoding {
    pub fn residual_bytes(&self) -> &[u8] {
        &self.packet.residual
    }
}

impl EncoderState {
    pub fn new(prior: Arc<Scene>, intrinsics: Intrinsics<f64>) -> Self {
        Self {
            prior,
            intrinsics,
            prev_pose: None,
            prev_good: false,
            frame_index: 0,
            mse_gate: DEFAULT_MSE_GATE,
            mode: EncoderMode::Invs,
            objective: Objective::Mse,
            optimizer: Optimizer::Bfgs,
            options: OptimOptions::default(),
            match_cfg: MatchConfig::default(),
            codec_mode: CodecMode::Lossy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prev_good && self.prev_pose.is_none() {
            return Err(Error::InvalidConfig("prev_good without a previous pose".into()));
        }
        if !(self.mse_gate > 0.0) {
            return Err(Error::InvalidConfig("mse gate must be positive".into()));
        }
        self.intrinsics.validate()?;
        self.options.validate()?;
        self.match_cfg.validate()
    }

    /// Starts from the previous frame's pose when it was good and still explains `camera`
    /// within the gate, otherwise from `estimator_pose`.
    pub fn initialize_pose(&self, camera: &Image<f64>, estimator_pose: &Pose<f64>) -> Result<(Pose<f64>, InitSource)> {
        if let (true, Some(prev)) = (self.prev_good, self.prev_pose) {
            let m = mse(camera, &render(&self.prior, &prev, &self.intrinsics)?)?;
            if m < self.mse_gate {
                return Ok((prev, InitSource::PreviousFrame));
            }
        }
        Ok((*estimator_pose, InitSource::Estimator))
    }

    pub fn encode_frame(&mut self, camera: &Image<f64>, estimator_pose: &Pose<f64>, quality: u8) -> Result<FrameEncoding> {
        let mut out = self.encode_frame_at(camera, estimator_pose, &[quality])?;
        Ok(out.pop().expect("one quality in, one encoding out"))
    }

    /// Refines the pose once and codes the residual at each of `qualities`. State advances
    /// by one frame.
    pub fn encode_frame_at(&mut self, camera: &Image<f64>, estimator_pose: &Pose<f64>, qualities: &[u8]) -> Result<Vec<FrameEncoding>> {
        self.validate()?;
        let k = self.intrinsics;
        if camera.width != k.width || camera.height != k.height {
            return Err(Error::ShapeMismatch(camera.width, camera.height, k.width, k.height));
        }
        if qualities.is_empty() {
            return Err(Error::InvalidConfig("no codec quality given".into()));
        }
        let params: Vec<CodecParams> = qualities.iter().map(|&quality| CodecParams { quality, mode: self.codec_mode }).collect();
        for p in &params {
            p.validate()?;
        }

        let (init, init_source) = match self.mode {
            EncoderMode::Invs => self.initialize_pose(camera, estimator_pose)?,
            EncoderMode::NoOpt => (*estimator_pose, InitSource::Estimator),
        };
        let initial_loss = mse(camera, &render(&self.prior, &init, &k)?)?;
        let mut iterations = 0;
        let mut function_evals = 0;
        let mut optimizer_failed = false;
        let mut converged_by = None;
        let pose = match self.mode {
            EncoderMode::NoOpt => init,
            EncoderMode::Invs => {
                let prior = &self.prior;
                let (objective, match_cfg) = (self.objective, self.match_cfg);
                let f = |x: &[f64]| {
                    loss_and_grad(prior, &init, &Twist::from_slice(x), &k, camera, objective, &match_cfg).map(|(l, g)| (l, g.to_vec()))
                };
                match self.optimizer.minimize(f, &[0.0; 6], &self.options) {
                    Ok(r) => {
                        iterations = r.iterations;
                        function_evals = r.function_evals;
                        converged_by = Some(r.converged_by);
                        retract(&init, &Twist::from_slice(&r.x))
                    }
                    Err(OptimError::NumericalFailure { .. } | OptimError::Objective { .. }) => {
                        optimizer_failed = true;
                        init
                    }
                }
            }
        };

        // render from exactly what the decoder will reconstruct
        let wire = pose_to_wire(&pose);
        let pose = pose_from_wire(&wire);
        let rendered = render(&self.prior, &pose, &k)?;
        let residual = Image {
            width: k.width,
            height: k.height,
            data: camera.data.iter().zip(&rendered.data).map(|(c, r)| c - r).collect(),
        };
        let residual_energy = mse(camera, &rendered)?;
        let planes = codec::residual_quantize(&residual)?;

        let mut out = Vec::with_capacity(params.len());
        for p in &params {
            let bytes = codec::encode(&planes, p)?;
            let decoded = codec::decode(&bytes)?;
            let reconstructed = reconstruct(&rendered, Some(&decoded))?;
            let packet = FramePacket {
                frame_id: self.frame_index,
                pose: wire,
                residual_present: true,
                lossless: p.mode == CodecMode::Lossless,
                residual: bytes,
            };
            let packet_bytes = serialize_packet(&packet)?;
            let stats = FrameStats {
                iterations,
                function_evals,
                residual_energy,
                psnr_rendered: psnr(residual_energy)?,
                psnr_reconstructed: psnr(mse(camera, &reconstructed)?)?,
                bytes_total: packet_bytes.len(),
                initial_loss,
                optimizer_failed,
                converged_by,
            };
            out.push(FrameEncoding { pose, init_source, packet, packet_bytes, rendered: rendered.clone(), reconstructed, stats });
        }

        self.prev_pose = Some(pose);
        self.prev_good = residual_energy < self.mse_gate;
        self.frame_index = self.frame_index.wrapping_add(1);
        Ok(out)
    }
}

/// Noisy odometry standing in for a learned pose regressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryEstimator {
    pub rot_noise_deg: f64,
    pub trans_noise: f64,
    pub seed: u64,
}

impl OdometryEstimator {
    pub fn new(rot_noise_deg: f64, trans_noise: f64, seed: u64) -> Result<Self> {
        if !(rot_noise_deg >= 0.0 && trans_noise >= 0.0) {
            return Err(Error::InvalidConfig("noise magnitudes must be non-negative".into()));
        }
        Ok(Self { rot_noise_deg, trans_noise, seed })
    }

    /// `true_pose` rotated about a random axis by up to `rot_noise_deg` (camera centre fixed)
    /// and shifted in a random direction by up to `trans_noise`.
    pub fn estimate_pose(&self, true_pose: &Pose<f64>, frame_index: u64) -> Pose<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index);
        let axis = random_unit(&mut rng);
        let angle = rng.gen_range(0.0..=1.0) * self.rot_noise_deg.to_radians();
        let dir = random_unit(&mut rng);
        let dist = rng.gen_range(0.0..=1.0) * self.trans_noise;
        let mut out = *true_pose;
        if angle > 0.0 {
            out.rotation = (Quat::from_rotation_vector(&axis.scale(angle)) * out.rotation).normalized();
        }
        if dist > 0.0 {
            out.center += dir.scale(dist);
        }
        out
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}
