use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rallyrecon::camgeom::TableModel;
use rallyrecon::io::{
    read_jsonl, read_report, read_text, write_jsonl, write_text, CameraRecord, Keypoint, KeypointFrame, ResultRecord,
    REPORT_JSON,
};
use rallyrecon::physics::PhysParams;
use rallyrecon::rallyseg::Detection;
use rallyrecon::synthbench::{
    random_rally, render_features, render_track, NoiseModel, Rally, ShotEnvelope, ViewName, ViewPreset,
};

fn rallyrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rallyrecon")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    rally: Rally,
    detections: PathBuf,
    keypoints: PathBuf,
}

/// A three-shot rally seen from the side, with labelled table keypoints.
fn fixture(noise: NoiseModel) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let table = TableModel::ittf();
    let params = PhysParams::table_tennis();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rally = random_rally(&mut rng, 3, &ShotEnvelope::default(), &params, &table);
    let cam = ViewPreset::new(ViewName::Side, &table).camera;
    let track = render_track(&rally.truth, &cam, 25.0, 0.4, &noise);
    let detections = root.join("detections.jsonl");
    write_jsonl(&detections, track.detections()).unwrap();
    let frames: Vec<KeypointFrame> = track
        .detections()
        .iter()
        .map(|d| KeypointFrame {
            frame: d.frame,
            t: d.t,
            points: render_features(&cam, &table, 1.0, &mut rng)
                .unwrap()
                .iter()
                .map(|c| Keypoint { label: Some(c.label), u: c.image.x, v: c.image.y })
                .collect(),
        })
        .collect();
    let keypoints = root.join("keypoints.jsonl");
    write_jsonl(&keypoints, &frames).unwrap();
    Fixture { _dir: dir, root, rally, detections, keypoints }
}

fn calibrate(fx: &Fixture) -> PathBuf {
    let out = fx.root.join("calibration.jsonl");
    let o = rallyrecon(&["calibrate", p(&fx.keypoints), "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn calibrate_recovers_focal_length() {
    let fx = fixture(NoiseModel::none());
    let out = calibrate(&fx);
    let recs: Vec<CameraRecord> = read_jsonl(&out).unwrap();
    let n_frames = read_text(&fx.keypoints).unwrap().lines().count();
    assert_eq!(recs.len(), n_frames);
    let f_true = ViewPreset::new(ViewName::Side, &TableModel::ittf()).camera.intrinsics.f;
    for r in &recs {
        assert!((r.f - f_true).abs() < 0.05 * f_true, "f = {}", r.f);
    }
}

#[test]
fn calibrate_survives_invalid_frames() {
    let fx = fixture(NoiseModel::none());
    let mut frames: Vec<KeypointFrame> = read_jsonl(&fx.keypoints).unwrap();
    let n = frames.len();
    for (k, f) in frames.iter_mut().enumerate() {
        if k % 10 < 3 && k > 0 {
            f.points.truncate(2);
        }
    }
    write_jsonl(&fx.keypoints, &frames).unwrap();
    let out = fx.root.join("calibration.jsonl");
    let o = rallyrecon(&["calibrate", p(&fx.keypoints), "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("calibration failed"));
    let recs: Vec<CameraRecord> = read_jsonl(&out).unwrap();
    assert_eq!(recs.len(), n);
}

#[test]
fn calibrate_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let kp = dir.path().join("empty.jsonl");
    write_text(&kp, "").unwrap();
    let o = rallyrecon(&["calibrate", p(&kp), "-o", p(&dir.path().join("c.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn reconstruct_writes_one_record_per_bounce() {
    let fx = fixture(NoiseModel::none());
    let calib = calibrate(&fx);
    let out = fx.root.join("recon");
    let o = rallyrecon(&["reconstruct", p(&fx.detections), p(&calib), "-o", p(&out), "--svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs: Vec<ResultRecord> = read_jsonl(&out.join("results.jsonl")).unwrap();
    let dets: Vec<Detection> = read_jsonl(&fx.detections).unwrap();
    let (t0, t1) = (dets[0].t, dets[dets.len() - 1].t);
    let observed: Vec<f64> = fx.rally.truth.bounces.iter().map(|b| b.t).filter(|&t| t > t0 && t < t1).collect();
    assert_eq!(recs.len(), observed.len());
    for (r, t) in recs.iter().zip(&observed) {
        assert!((r.t_star - t).abs() < 0.01);
        assert!(r.success, "{r:?}");
        assert!(r.x_bounce.is_some() && r.v_minus.is_some() && r.omega_minus.is_some());
        assert!(r.v_plus.is_some() && r.omega_plus.is_some() && r.reproj_rmse.is_some());
        let traj = out.join(r.trajectory.as_ref().unwrap());
        assert!(read_text(&traj).unwrap().starts_with("t,x,y,z\n"));
    }
    assert!(read_text(&out.join("trajectories.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn reconstruct_rejects_short_track() {
    let fx = fixture(NoiseModel::none());
    let calib = calibrate(&fx);
    let dets: Vec<Detection> = read_jsonl(&fx.detections).unwrap();
    let short = fx.root.join("short.jsonl");
    write_jsonl(&short, &dets[..2]).unwrap();
    let o = rallyrecon(&["reconstruct", p(&short), p(&calib), "-o", p(&fx.root.join("r"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn missing_blur_is_a_warning() {
    let fx = fixture(NoiseModel::none());
    let mut dets: Vec<Detection> = read_jsonl(&fx.detections).unwrap();
    for d in &mut dets {
        d.blur_angle = None;
        d.blur_length = None;
    }
    write_jsonl(&fx.detections, &dets).unwrap();
    let (s, e) = (fx.root.join("s.jsonl"), fx.root.join("e.jsonl"));
    let o = rallyrecon(&["segment", p(&fx.detections), "--segments-out", p(&s), "--events-out", p(&e)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no blur angles"));
}

#[test]
fn unknown_physics_is_an_input_error() {
    let fx = fixture(NoiseModel::none());
    let calib = calibrate(&fx);
    let o = rallyrecon(&["reconstruct", p(&fx.detections), p(&calib), "-o", p(&fx.root.join("r")), "--physics", "curling"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rallyrecon(&["bench", "-o", p(&fx.root.join("b")), "--physics", "tennis-clay"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_with_shipped_config_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_file("configs/bench.json");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rallyrecon(&["bench", "--config", p(&config), "-n", "3", "--seed", "5", "-o", p(&out), "--svg"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (out, String::from_utf8(o.stdout).unwrap())
    };
    let (a, table_a) = run("a");
    let (b, table_b) = run("b");
    assert_eq!(table_a, table_b);
    for f in ["report.json", "records.csv", "summary.txt", "mae.svg"] {
        assert_eq!(read_text(&a.join(f)).unwrap(), read_text(&b.join(f)).unwrap(), "{f}");
    }
    let report = read_report(&a.join(REPORT_JSON)).unwrap();
    for noisy in [false, true] {
        let views: Vec<ViewName> = report.rows.iter().filter(|r| r.noisy == noisy).map(|r| r.view).collect();
        assert_eq!(views, ViewName::ALL.to_vec());
    }
    assert_eq!(report.records.len(), 3 * 3 * 2);
}

#[test]
fn plot_trajectories_and_report() {
    let fx = fixture(NoiseModel::none());
    let calib = calibrate(&fx);
    let out = fx.root.join("recon");
    assert!(rallyrecon(&["reconstruct", p(&fx.detections), p(&calib), "-o", p(&out)]).status.success());
    let csvs: Vec<PathBuf> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    assert!(!csvs.is_empty());
    let svg = fx.root.join("paths.svg");
    let mut args = vec!["plot"];
    args.extend(csvs.iter().map(|c| p(c)));
    args.extend(["-o", p(&svg)]);
    let o = rallyrecon(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read_text(&svg).unwrap().contains("<polyline"));

    let bench = fx.root.join("bench");
    assert!(rallyrecon(&["bench", "-n", "2", "-o", p(&bench)]).status.success());
    let scatter = fx.root.join("mae.svg");
    let o = rallyrecon(&["plot", p(&bench.join(REPORT_JSON)), "-o", p(&scatter)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read_text(&scatter).unwrap().contains("<circle"));

    let o = rallyrecon(&["plot", p(&bench.join(REPORT_JSON)), p(&csvs[0]), "-o", p(&scatter)]);
    assert_eq!(o.status.code(), Some(2));
}
