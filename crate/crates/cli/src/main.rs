use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use invs::codec::{self, CodecMode};
use invs::encoder::{EncoderMode, EncoderState};
use invs::eval::{self, StudyConfig};
use invs::geometry::{Intrinsics, Pose};
use invs::image::{read_ppm, write_ppm, Image};
use invs::optimize::Optimizer;
use invs::protocol::{decode_frame, parse_packet, simulate_link, write_link_csv};
use invs::render::{render, Objective};
use invs::scene::{generate_synthetic_scene, load_scene, save_scene, Aabb, Scene, SceneStyle};

#[derive(Parser)]
#[command(name = "invs", version, about = "Pose-plus-residual image coding against a shared Gaussian scene")]
struct Cli {
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 75)]
    quality: u8,
    #[arg(long, global = true, default_value = "bfgs")]
    optimizer: Optimizer,
    /// Defaults to mse, except `study perturb` which runs both.
    #[arg(long, global = true)]
    objective: Option<Objective>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenes.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Perturbation, benchmark and robustness studies.
    #[command(subcommand)]
    Study(StudyCmd),
    /// Encode a camera frame into a packet.
    Encode(EncodeArgs),
    /// Reconstruct a frame from a packet.
    Decode(DecodeArgs),
    /// Acoustic link arithmetic.
    #[command(subcommand)]
    Link(LinkCmd),
}

#[derive(Args, Clone)]
struct SceneArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value = "scatter")]
    style: SceneStyle,
    /// Half-width of the cube the scene fills.
    #[arg(long, default_value_t = 1.0)]
    half_extent: f32,
}

#[derive(Args, Clone)]
struct CameraArgs {
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 90)]
    height: usize,
    #[arg(long, default_value_t = 150.0)]
    focal: f64,
}

impl CameraArgs {
    fn intrinsics(&self) -> Result<Intrinsics<f64>> {
        Ok(Intrinsics::centered(self.focal, self.width, self.height)?)
    }
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Generate a scene file plus the trajectory poses and renders.
    Gen {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        camera: CameraArgs,
        /// Trajectory frames rendered as PPM (0 for none).
        #[arg(long, default_value_t = 1)]
        frames: usize,
    },
    /// Render a scene file at a pose.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// `qw qx qy qz cx cy cz`, with `c` the camera centre.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[command(flatten)]
        camera: CameraArgs,
        #[arg(long, default_value = "render.ppm")]
        output: String,
    },
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    rotation_grid: Option<Vec<f64>>,
    /// Scene-diameter fractions.
    #[arg(long, value_delimiter = ',')]
    translation_grid: Option<Vec<f64>>,
    /// Benchmark qualities; defaults to `--quality`.
    #[arg(long, value_delimiter = ',')]
    qualities: Option<Vec<u8>>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    camera_noise: Option<f64>,
    #[arg(long)]
    estimator_noise_deg: Option<f64>,
    #[arg(long)]
    novel_count: Option<usize>,
    #[arg(long)]
    scene_count: Option<usize>,
}

#[derive(Subcommand)]
enum StudyCmd {
    Perturb(StudyArgs),
    Benchmark(StudyArgs),
    Robust(StudyArgs),
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Camera frame (binary PPM).
    #[arg(long)]
    camera: PathBuf,
    /// Initial pose estimate, `qw qx qy qz cx cy cz`.
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    #[arg(long, default_value_t = 150.0)]
    focal: f64,
    #[arg(long)]
    lossless: bool,
    /// Skip pose refinement.
    #[arg(long)]
    no_opt: bool,
    #[arg(long, default_value = "frame.nvp")]
    output: String,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    packet: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    #[arg(long, default_value = "decoded.ppm")]
    output: String,
}

#[derive(Subcommand)]
enum LinkCmd {
    /// Transmission times for a sequence of packet sizes.
    Sim {
        /// Packet files whose sizes are used.
        #[arg(long, num_args = 1..)]
        packets: Vec<PathBuf>,
        /// Constant packet size in bytes, repeated `--count` times.
        #[arg(long)]
        bytes: Option<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 100_000.0)]
        bitrate: f64,
        #[arg(long, default_value_t = 0.0)]
        overhead: f64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Scene(SceneCmd::Gen { scene, camera, frames }) => scene_gen(&cli, scene, camera, *frames),
        Command::Scene(SceneCmd::Render { scene, pose, camera, output }) => {
            let s = read_scene(scene)?;
            let pose: Pose<f64> = pose.parse()?;
            save_ppm(&render(&s, &pose, &camera.intrinsics()?)?, &cli.out_dir.join(output))
        }
        Command::Study(cmd) => study(&cli, cmd),
        Command::Encode(a) => encode(&cli, a),
        Command::Decode(a) => decode(&cli, a),
        Command::Link(LinkCmd::Sim { packets, bytes, count, bitrate, overhead }) => {
            let sizes: Vec<f64> = match bytes {
                Some(b) => vec![*b; *count],
                None if !packets.is_empty() => {
                    packets.iter().map(|p| Ok(fs::metadata(p).with_context(|| p.display().to_string())?.len() as f64)).collect::<Result<_>>()?
                }
                None => bail!("give --bytes or --packets"),
            };
            let report = simulate_link(&sizes, *bitrate, *overhead)?;
            let path = cli.out_dir.join("link.csv");
            write_link_csv(&report, BufWriter::new(File::create(&path)?))?;
            println!("{} packets, {} bytes, {:.6} s, {:.4} fps", report.records.len(), report.total_bytes, report.total_time_s, report.fps);
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn read_scene(path: &Path) -> Result<Scene> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_scene(BufReader::new(f))?)
}

fn save_ppm(img: &Image<f64>, path: &Path) -> Result<()> {
    write_ppm(img, BufWriter::new(File::create(path)?))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn scene_gen(cli: &Cli, a: &SceneArgs, cam: &CameraArgs, frames: usize) -> Result<()> {
    let h = a.half_extent;
    let bounds = Aabb::new([-h; 3], [h; 3])?;
    let scene = generate_synthetic_scene(cli.seed, a.count, &bounds, a.style)?;
    let path = cli.out_dir.join("scene.gsc");
    save_scene(&scene, BufWriter::new(File::create(&path)?))?;
    println!("wrote {} ({} gaussians)", path.display(), scene.len());
    let cfg = StudyConfig { bounds, ..StudyConfig::default() };
    let k = cam.intrinsics()?;
    for (i, pose) in cfg.trajectory()?.iter().take(frames).enumerate() {
        println!("frame {i} pose: {pose}");
        save_ppm(&render(&scene, pose, &k)?, &cli.out_dir.join(format!("frame_{i:03}.ppm")))?;
    }
    Ok(())
}

fn study_config(cli: &Cli, a: &StudyArgs, perturb: bool) -> StudyConfig {
    let d = StudyConfig::default();
    let objectives = match cli.objective {
        Some(o) => vec![o],
        None if perturb => d.objectives.clone(),
        None => vec![Objective::Mse],
    };
    StudyConfig {
        seed: cli.seed,
        scene_count: a.scene_count.unwrap_or(d.scene_count),
        rows: a.rows.unwrap_or(d.rows),
        steps: a.steps.unwrap_or(d.steps),
        rotation_grid_deg: a.rotation_grid.clone().unwrap_or(d.rotation_grid_deg.clone()),
        translation_grid: a.translation_grid.clone().unwrap_or(d.translation_grid.clone()),
        trials: a.trials.unwrap_or(d.trials),
        objectives,
        optimizers: vec![cli.optimizer],
        quality: cli.quality,
        qualities: a.qualities.clone().unwrap_or(vec![cli.quality]),
        estimator_rot_deg: a.estimator_noise_deg.unwrap_or(d.estimator_rot_deg),
        camera_noise: a.camera_noise.unwrap_or(d.camera_noise),
        novel_count: a.novel_count.unwrap_or(d.novel_count),
        ..d
    }
}

fn write_rows<S: serde::Serialize>(rows: &[S], path: PathBuf) -> Result<()> {
    eval::write_csv(rows, BufWriter::new(File::create(&path)?))?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn study(cli: &Cli, cmd: &StudyCmd) -> Result<()> {
    let out = &cli.out_dir;
    match cmd {
        StudyCmd::Perturb(a) => {
            let cfg = study_config(cli, a, true);
            write_rows(&eval::run_perturbation_study(&cfg)?, out.join("perturb.csv"))
        }
        StudyCmd::Benchmark(a) => {
            let rep = eval::run_compression_benchmark(&study_config(cli, a, false))?;
            for r in &rep.rows {
                println!("{:?} q{}: ratio {:.2}, {:.1} B, {:.2} dB", r.method, r.quality, r.compression_ratio, r.mean_bytes, r.mean_psnr);
            }
            write_rows(&rep.rows, out.join("benchmark.csv"))?;
            write_rows(&rep.matched, out.join("benchmark_matched.csv"))?;
            write_rows(&rep.frames, out.join("benchmark_frames.csv"))
        }
        StudyCmd::Robust(a) => {
            let rep = eval::run_robustness_study(&study_config(cli, a, false))?;
            for r in &rep.rows {
                println!(
                    "{:?} {:?} q{}: {:.1} B, {:.2} dB, estimator inits {}",
                    r.scenario, r.method, r.quality, r.mean_bytes, r.mean_psnr, r.estimator_inits
                );
            }
            write_rows(&rep.rows, out.join("robust.csv"))?;
            write_rows(&rep.frames, out.join("robust_frames.csv"))
        }
    }
}

fn encode(cli: &Cli, a: &EncodeArgs) -> Result<()> {
    let scene = Arc::new(read_scene(&a.scene)?);
    let camera = read_ppm(BufReader::new(File::open(&a.camera).with_context(|| a.camera.display().to_string())?))?;
    let init: Pose<f64> = a.pose.parse()?;
    let k = Intrinsics::centered(a.focal, camera.width, camera.height)?;
    let mut st = EncoderState::new(scene, k);
    st.optimizer = cli.optimizer;
    st.objective = cli.objective.unwrap_or(Objective::Mse);
    st.mode = if a.no_opt { EncoderMode::NoOpt } else { EncoderMode::Invs };
    st.codec_mode = if a.lossless { CodecMode::Lossless } else { CodecMode::Lossy };
    let enc = st.encode_frame(&camera, &init, cli.quality)?;
    let path = cli.out_dir.join(&a.output);
    fs::write(&path, &enc.packet_bytes)?;
    let s = &enc.stats;
    println!("pose: {}", enc.pose);
    println!(
        "{} bytes ({} residual), {} iterations, rendered {:.2} dB, reconstructed {:.2} dB{}",
        s.bytes_total,
        enc.residual_bytes().len(),
        s.iterations,
        s.psnr_rendered,
        s.psnr_reconstructed,
        if s.optimizer_failed { ", optimizer failed" } else { "" }
    );
    println!("wrote {}", path.display());
    save_ppm(&enc.rendered, &cli.out_dir.join("rendered.ppm"))?;
    save_ppm(&enc.reconstructed, &cli.out_dir.join("reconstructed.ppm"))
}

fn decode(cli: &Cli, a: &DecodeArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let packet = parse_packet(&fs::read(&a.packet).with_context(|| a.packet.display().to_string())?)?;
    let (w, h) = if packet.residual_present {
        let (_, w, h) = codec::peek_header(&packet.residual)?;
        (w, h)
    } else {
        (a.camera.width, a.camera.height)
    };
    let k = Intrinsics::centered(a.camera.focal, w, h)?;
    let img = decode_frame(&packet, &scene, &k)?;
    println!("frame {}: {}x{}", packet.frame_id, w, h);
    save_ppm(&img, &cli.out_dir.join(&a.output))
}
