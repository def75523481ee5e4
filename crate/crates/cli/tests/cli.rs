use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use splatloop::gaussians::read_ply;
use splatloop::imaging::{read_depth, read_image, write_depth, write_image, write_mask};
use splatloop::pipeline::load_session;
use splatloop::{DepthMap, ImageRGB, Mask};

fn splatloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatloop")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = splatloop(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn full_session_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    let session = tmp.path().join("session");

    ok(&["gen-gt", "--size", "64", "--n", "4", "--out", p(&gt)]);
    let poses = fs::read_to_string(gt.join("poses.txt")).unwrap();
    let pose_lines: Vec<&str> = poses.lines().collect();
    assert_eq!(pose_lines.len(), 4);
    assert_eq!(read_image(gt.join("frame_0003.png")).unwrap().width(), 64);
    assert!(gt.join("depth_0003.pfm").exists() && gt.join("intrinsics.json").exists());

    let msg = ok(&[
        "init",
        "--image",
        p(&gt.join("frame_0000.png")),
        "--depth",
        p(&gt.join("depth_0000.pfm")),
        "--session",
        p(&session),
        "--n-d",
        "12",
    ]);
    assert!(msg.contains("4096 Gaussians"), "{msg}");
    let state = load_session(&session).unwrap();
    assert_eq!((state.step_count, state.config.n_d, state.global.len()), (1, 12, 4096));

    let step_out = tmp.path().join("step");
    let msg = ok(&[
        "step",
        "--session",
        p(&session),
        "--pose",
        pose_lines[1],
        "--prompt",
        "turn",
        "--out",
        p(&step_out),
        "--dump-cost-volume",
    ]);
    let timing: serde_json::Value = serde_json::from_str(msg.lines().last().unwrap()).unwrap();
    assert!(timing["total_ms"].as_f64().unwrap() > 0.0);
    assert!(step_out.join("frame_0001.png").exists() && step_out.join("depth_0001.pfm").exists());
    let slices = fs::read_dir(step_out.join("cost_volume/step_0001")).unwrap().count();
    assert_eq!(slices, 12);
    assert_eq!(csv_rows(&step_out.join("timing.csv"))[0], "render_ms,inpaint_ms,depth_ms,stepsplat_ms,fuse_ms,total_ms");
    let state = load_session(&session).unwrap();
    assert_eq!(state.step_count, 2);
    assert_eq!(state.prompts, vec!["turn".to_string()]);

    let traj_out = tmp.path().join("traj");
    ok(&["run-trajectory", "--session", p(&session), "--poses", p(&gt.join("poses.txt")), "--out", p(&traj_out)]);
    assert_eq!(csv_rows(&traj_out.join("timing.csv")).len(), 5);
    assert!(traj_out.join("frame_0004.png").exists());
    let state = load_session(&session).unwrap();
    assert_eq!(state.step_count, 6);

    let renders = tmp.path().join("renders");
    ok(&["render", "--session", p(&session), "--poses", p(&gt.join("poses.txt")), "--out", p(&renders)]);
    let from_session = fs::read(renders.join("frame_0002.png")).unwrap();
    let ply_renders = tmp.path().join("ply_renders");
    ok(&[
        "render",
        "--ply",
        p(&session.join("scene.ply")),
        "--width",
        "64",
        "--height",
        "64",
        "--poses",
        p(&gt.join("poses.txt")),
        "--out",
        p(&ply_renders),
    ]);
    assert_eq!(fs::read(ply_renders.join("frame_0002.png")).unwrap(), from_session);
    assert_eq!(read_ply(session.join("scene.ply")).unwrap().len(), state.global.len());
}

#[test]
fn trajectory_by_name_without_saving() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    let session = tmp.path().join("s");
    ok(&["gen-gt", "--size", "32", "--n", "1", "--out", p(&gt)]);
    ok(&["init", "--image", p(&gt.join("frame_0000.png")), "--constant-depth", "2.5", "--session", p(&session)]);
    let out = tmp.path().join("out");
    let msg = ok(&["run-trajectory", "--session", p(&session), "--trajectory", "panorama", "--n", "3", "--out", p(&out), "--no-save"]);
    assert!(msg.contains("mean over 3 steps"), "{msg}");
    assert_eq!(csv_rows(&out.join("timing.csv")).len(), 4);
    assert_eq!(load_session(&session).unwrap().step_count, 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    ok(&["gen-gt", "--size", "32", "--n", "1", "--out", p(&gt)]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "n_d = 8\ndelta = 0.1\n").unwrap();
    let session = tmp.path().join("s");
    let image = gt.join("frame_0000.png");
    let depth = gt.join("depth_0000.pfm");
    ok(&["init", "--image", p(&image), "--depth", p(&depth), "--session", p(&session), "--config", p(&cfg), "--delta", "0.2"]);
    let state = load_session(&session).unwrap();
    assert_eq!((state.config.n_d, state.config.delta), (8, 0.2));

    let bad = splatloop(&["init", "--image", p(&image), "--depth", p(&depth), "--session", p(&session), "--n-d", "1"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("n_d"));
    fs::write(&cfg, "n_dd = 8\n").unwrap();
    let bad = splatloop(&["init", "--image", p(&image), "--depth", p(&depth), "--session", p(&session), "--config", p(&cfg)]);
    assert!(!bad.status.success());
}

#[test]
fn complete_fills_only_holes() {
    let tmp = tempfile::tempdir().unwrap();
    let (w, h) = (24, 16);
    let rgb = ImageRGB::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5]);
    let depth = DepthMap::new(w, h, (0..w * h).map(|i| 1.0 + (i % w) as f32 * 0.1).collect()).unwrap();
    let known: Vec<bool> = (0..w * h).map(|i| !((8..16).contains(&(i % w)) && (4..12).contains(&(i / w)))).collect();
    write_image(tmp.path().join("rgb.png"), &rgb).unwrap();
    write_depth(tmp.path().join("d.pfm"), &depth).unwrap();
    write_mask(tmp.path().join("m.png"), &Mask::new(w, h, known.clone()).unwrap()).unwrap();
    let msg = ok(&[
        "complete",
        "--image",
        p(&tmp.path().join("rgb.png")),
        "--depth",
        p(&tmp.path().join("d.pfm")),
        "--mask",
        p(&tmp.path().join("m.png")),
        "--out-image",
        p(&tmp.path().join("rgb_out.png")),
        "--out-depth",
        p(&tmp.path().join("d_out.pfm")),
    ]);
    assert!(msg.contains("filled 64 hole pixels"), "{msg}");
    let filled = read_depth(tmp.path().join("d_out.pfm")).unwrap();
    let rgb_in = read_image(tmp.path().join("rgb.png")).unwrap();
    let rgb_out = read_image(tmp.path().join("rgb_out.png")).unwrap();
    for (i, &k) in known.iter().enumerate() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        if k {
            assert_eq!(filled.get(x, y), depth.get(x, y));
            assert_eq!(rgb_out.get(x, y), rgb_in.get(x, y));
        } else {
            // Harmonic fill of a horizontal ramp stays within the ramp.
            assert!(filled.get(x, y) > 1.7 && filled.get(x, y) < 2.6, "{}", filled.get(x, y));
        }
    }
}

#[test]
fn bench_writes_timing_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    let msg = ok(&["--threads", "1", "bench", "--size", "32", "--steps", "2", "--timing-csv", p(&csv)]);
    assert!(msg.contains("reference GPU"), "{msg}");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split(',').count(), 6);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!splatloop(&[]).status.success());
    assert!(!splatloop(&["init", "--image", "x.png", "--session", "s"]).status.success(), "needs a depth source");
    let out = splatloop(&["step", "--session", "/nonexistent/session", "--pose", "1 0 0 0 0 1 0 0 0 0 1 0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}
