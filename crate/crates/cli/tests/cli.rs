use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("invs-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn invs(dir: &PathBuf, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_invs")).arg("--out-dir").arg(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn encode_then_decode_reproduces_the_encoder_reconstruction() {
    let dir = scratch("roundtrip");
    let gen = invs(&dir, &["scene", "gen", "--count", "80", "--frames", "1"]);
    let stdout = String::from_utf8(gen.stdout).unwrap();
    let pose = stdout.lines().find_map(|l| l.strip_prefix("frame 0 pose: ")).unwrap().to_string();
    let scene = dir.join("scene.gsc");
    let camera = dir.join("frame_000.ppm");
    invs(&dir, &["--quality", "60", "encode", "--scene", scene.to_str().unwrap(), "--camera", camera.to_str().unwrap(), "--pose", &pose]);
    let packet = dir.join("frame.nvp");
    invs(&dir, &["decode", "--scene", scene.to_str().unwrap(), "--packet", packet.to_str().unwrap()]);
    assert_eq!(fs::read(dir.join("decoded.ppm")).unwrap(), fs::read(dir.join("reconstructed.ppm")).unwrap());

    let sim = invs(&dir, &["link", "sim", "--packets", packet.to_str().unwrap()]);
    let len = fs::metadata(&packet).unwrap().len();
    assert!(String::from_utf8(sim.stdout).unwrap().contains(&format!("{len} bytes")));
}

#[test]
fn link_sim_reports_ten_frames_per_second() {
    let dir = scratch("link");
    let out = invs(&dir, &["link", "sim", "--bytes", "1250", "--count", "20"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("10.0000 fps"));
    let csv = fs::read_to_string(dir.join("link.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("frame_id,bytes,tx_time_s,cumulative_s"));
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn perturbation_study_writes_one_row_per_trial() {
    let dir = scratch("perturb");
    invs(
        &dir,
        &[
            "--objective", "mse", "study", "perturb", "--scene-count", "60", "--rows", "1", "--steps", "3", "--trials", "2",
            "--rotation-grid", "0,2", "--translation-grid", "0.01",
        ],
    );
    let csv = fs::read_to_string(dir.join("perturb.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("axis_kind,magnitude,trial,objective,optimizer,psnr_db,residual_energy,compressed_bytes,iterations,failed")
    );
    assert_eq!(lines.count(), 3 * 2);
    assert!(csv.contains("rotation,0.0,0,mse,bfgs,inf,0.0,"));
}

#[test]
fn rejects_unknown_optimizer() {
    let dir = scratch("bad");
    let out = Command::new(env!("CARGO_BIN_EXE_invs")).arg("--out-dir").arg(&dir).args(["--optimizer", "newton", "link", "sim", "--bytes", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown optimizer"));
}
