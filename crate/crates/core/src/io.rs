//! Line-oriented file formats: JSON records, one per line, and CSV.
//!
//! Every writer emits a canonical form, so reading a written file and writing
//! it again reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibConfig, TrackerConfig};
use crate::camgeom::{CalibratedCamera, CamError, Intrinsics, Pose, TableFeature};
use crate::physics::{BallState, BounceRegime, PhysParams};
use crate::rallyseg::{Event, EventKind, Poly2, RallyTrack, SegConfig, Segment};
use crate::recon::{BounceReconstruction, ReconError, ReconWarning, SUCCESS_RMSE};
use crate::synthbench::{CalibMode, EvalReport, TrajectoryRecord, ViewName};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid content: {0}")]
    Invalid(String),
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> Self {
        Self::File { path: path.display().to_string(), source }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::file(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    fs::write(path, text).map_err(|e| IoError::file(path, e))
}

/// Parses JSON lines; blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| IoError::Parse { line: i + 1, msg: e.to_string() }))
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        // serialization of these plain records cannot fail
        s += &serde_json::to_string(r).expect("record serializes");
        s.push('\n');
    }
    s
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    parse_jsonl(&read_text(path)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_text(path, &to_jsonl(records))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse { line: e.line(), msg: e.to_string() })
}

// ---------------------------------------------------------------- keypoints

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TableFeature>,
    pub u: f64,
    pub v: f64,
}

/// Table keypoints of one video frame. Either every point is labelled, or
/// there are exactly four unlabelled corners in detector order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame: i64,
    pub t: f64,
    pub points: Vec<Keypoint>,
}

impl KeypointFrame {
    pub fn pixels(&self) -> Vec<Vector2<f64>> {
        self.points.iter().map(|p| Vector2::new(p.u, p.v)).collect()
    }
}

// ------------------------------------------------------ calibration stream

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub frame: i64,
    pub t: f64,
    pub f: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "T")]
    pub translation: [f64; 3],
    pub reprojection_rmse: f64,
    /// The measurement of this frame passed the tracker gate.
    #[serde(default = "yes")]
    pub accepted: bool,
}

fn yes() -> bool {
    true
}

impl CameraRecord {
    pub fn from_camera(frame: i64, t: f64, cam: &CalibratedCamera, accepted: bool) -> Self {
        let r = &cam.pose.r;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let tv = &cam.pose.t;
        Self {
            frame,
            t,
            f: cam.intrinsics.f,
            width: cam.intrinsics.width,
            height: cam.intrinsics.height,
            rotation,
            translation: [tv.x, tv.y, tv.z],
            reprojection_rmse: cam.reprojection_rmse,
            accepted,
        }
    }

    pub fn camera(&self) -> Result<CalibratedCamera, CamError> {
        let k = Intrinsics::new(self.f, self.width, self.height)?;
        let pose = Pose::new(Matrix3::from_row_slice(&self.rotation), Vector3::from(self.translation))?;
        let mut cam = CalibratedCamera::new(k, pose);
        cam.reprojection_rmse = self.reprojection_rmse;
        Ok(cam)
    }
}

/// Time-sorted `(t, camera)` stream from calibration records.
pub fn camera_stream(records: &[CameraRecord]) -> Result<Vec<(f64, CalibratedCamera)>, IoError> {
    let mut out = records
        .iter()
        .map(|r| r.camera().map(|c| (r.t, c)).map_err(|e| IoError::Invalid(format!("frame {}: {e}", r.frame))))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

// ------------------------------------------------------- segments, events

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_idx: usize,
    pub end_idx: usize,
    pub start_frame: i64,
    pub end_frame: i64,
    /// `u(t) = c0 + c1 t + c2 t^2`.
    pub coeff_u: [f64; 3],
    pub coeff_v: [f64; 3],
    pub fit_cost: f64,
}

impl SegmentRecord {
    pub fn from_segment(track: &RallyTrack, s: &Segment) -> Self {
        let d = track.detections();
        Self {
            start_idx: s.start_idx,
            end_idx: s.end_idx,
            start_frame: d[s.start_idx].frame,
            end_frame: d[s.end_idx].frame,
            coeff_u: s.coeff_u.0,
            coeff_v: s.coeff_v.0,
            fit_cost: s.fit_cost,
        }
    }

    pub fn segment(&self) -> Segment {
        Segment {
            start_idx: self.start_idx,
            end_idx: self.end_idx,
            coeff_u: Poly2(self.coeff_u),
            coeff_v: Poly2(self.coeff_v),
            fit_cost: self.fit_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Absent when the junction was not classified (no calibration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EventKind>,
    pub t_star: f64,
    pub u: f64,
    pub v: f64,
    pub left_segment: usize,
    pub right_segment: usize,
    #[serde(default)]
    pub low_confidence: bool,
}

impl EventRecord {
    pub fn from_event(e: &Event) -> Self {
        Self {
            kind: Some(e.kind),
            t_star: e.t_star,
            u: e.image_point.x,
            v: e.image_point.y,
            left_segment: e.left_segment,
            right_segment: e.right_segment,
            low_confidence: e.low_confidence,
        }
    }

    pub fn from_junction(k: usize, t_star: f64, p: Vector2<f64>) -> Self {
        Self { kind: None, t_star, u: p.x, v: p.y, left_segment: k, right_segment: k + 1, low_confidence: false }
    }
}

// ------------------------------------------------------------------ results

/// Reconstruction of one bounce. Failed bounces keep the event time and the
/// error; the state fields are then absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub t_star: f64,
    #[serde(rename = "X_bounce", default, skip_serializing_if = "Option::is_none")]
    pub x_bounce: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_minus: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_minus: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_plus: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_plus: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<BounceRegime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproj_rmse: Option<f64>,
    pub converged: bool,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File name of the trajectory samples, relative to the results file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl ResultRecord {
    pub fn from_bounce(b: &BounceReconstruction, trajectory: Option<String>) -> Self {
        let base = Self {
            t_star: b.event.t_star,
            x_bounce: None,
            v_minus: None,
            omega_minus: None,
            v_plus: None,
            omega_plus: None,
            regime: None,
            reproj_rmse: None,
            converged: false,
            success: false,
            iterations: None,
            low_confidence: b.event.low_confidence,
            warnings: Vec::new(),
            error: None,
            trajectory: None,
        };
        let (res, error) = match &b.result {
            Ok(r) => (r, None),
            Err(ReconError::NoConvergence { best }) => (best.as_ref(), Some(b.result.as_ref().unwrap_err().to_string())),
            Err(e) => return Self { error: Some(e.to_string()), ..base },
        };
        Self {
            t_star: res.t_star,
            x_bounce: Some(arr(&res.x_bounce)),
            v_minus: Some(arr(&res.v_minus)),
            omega_minus: Some(arr(&res.w_minus)),
            v_plus: Some(arr(&res.v_plus)),
            omega_plus: Some(arr(&res.w_plus)),
            regime: Some(res.regime),
            reproj_rmse: Some(res.reproj_rmse),
            converged: res.converged,
            success: error.is_none() && res.is_success(SUCCESS_RMSE),
            iterations: Some(res.iterations),
            warnings: res.warnings.iter().map(warning_text).collect(),
            error,
            trajectory,
            ..base
        }
    }
}

fn warning_text(w: &ReconWarning) -> String {
    match w {
        ReconWarning::Identifiability { post_obs } => format!("only {post_obs} post-bounce observations"),
    }
}

// --------------------------------------------------------------------- CSV

fn num(x: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{x:?}")
}

fn parse_num(s: &str, line: usize) -> Result<f64, IoError> {
    s.trim().parse().map_err(|_| IoError::Parse { line, msg: format!("not a number: {s:?}") })
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,z";

pub fn trajectory_csv(states: &[BallState]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for st in states {
        let _ = writeln!(s, "{},{},{},{}", num(st.t), num(st.p.x), num(st.p.y), num(st.p.z));
    }
    s
}

/// Rows `[t, x, y, z]` of a trajectory file.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<[f64; 4]>, IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(IoError::Parse { line: 1, msg: format!("expected header {TRAJECTORY_HEADER:?}") }),
    }
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(IoError::Parse { line: i + 1, msg: "expected 4 columns".into() });
            }
            Ok([parse_num(f[0], i + 1)?, parse_num(f[1], i + 1)?, parse_num(f[2], i + 1)?, parse_num(f[3], i + 1)?])
        })
        .collect()
}

/// Trajectory rows written back in canonical form.
pub fn trajectory_rows_csv(rows: &[[f64; 4]]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", num(r[0]), num(r[1]), num(r[2]), num(r[3]));
    }
    s
}

pub const RECORDS_HEADER: &str =
    "index,view,noisy,calibration,n_detections,n_observations,success,mae_cm,reproj_rmse,bounce_dt,failure";

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn calib_str(c: CalibMode) -> &'static str {
    match c {
        CalibMode::Known => "known",
        CalibMode::Estimated => "estimated",
    }
}

/// Per-trajectory rows of a benchmark report.
pub fn records_csv(records: &[TrajectoryRecord]) -> String {
    let mut s = String::from(RECORDS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.view.as_str(),
            r.noisy,
            calib_str(r.calibration),
            r.n_detections,
            r.n_observations,
            r.success,
            opt_num(r.mae_cm),
            opt_num(r.reproj_rmse),
            opt_num(r.bounce_dt),
            r.failure.as_deref().map(quote).unwrap_or_default()
        );
    }
    s
}

/// Splits one CSV line; only the last column may be quoted.
fn split_record_line(l: &str, line: usize) -> Result<(Vec<&str>, Option<String>), IoError> {
    let fields: Vec<&str> = l.splitn(11, ',').collect();
    if fields.len() != 11 {
        return Err(IoError::Parse { line, msg: "expected 11 columns".into() });
    }
    let last = fields[10];
    let failure = if last.is_empty() {
        None
    } else if last.len() >= 2 && last.starts_with('"') && last.ends_with('"') {
        Some(last[1..last.len() - 1].replace("\"\"", "\""))
    } else {
        return Err(IoError::Parse { line, msg: "failure column must be quoted".into() });
    };
    Ok((fields[..10].to_vec(), failure))
}

pub fn parse_records_csv(text: &str) -> Result<Vec<TrajectoryRecord>, IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        _ => return Err(IoError::Parse { line: 1, msg: "unexpected header".into() }),
    }
    lines
        .map(|(i, l)| {
            let n = i + 1;
            let (f, failure) = split_record_line(l, n)?;
            let bad = |what: &str| IoError::Parse { line: n, msg: format!("bad {what}") };
            let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(what));
            let boolean = |s: &str, what: &str| s.parse::<bool>().map_err(|_| bad(what));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { parse_num(s, n).map(Some) };
            let view = ViewName::ALL.into_iter().find(|v| v.as_str() == f[1]).ok_or_else(|| bad("view"))?;
            let calibration = match f[3] {
                "known" => CalibMode::Known,
                "estimated" => CalibMode::Estimated,
                _ => return Err(bad("calibration")),
            };
            Ok(TrajectoryRecord {
                index: int(f[0], "index")?,
                view,
                noisy: boolean(f[2], "noisy")?,
                calibration,
                n_detections: int(f[4], "n_detections")?,
                n_observations: int(f[5], "n_observations")?,
                success: boolean(f[6], "success")?,
                mae_cm: opt(f[7])?,
                reproj_rmse: opt(f[8])?,
                bounce_dt: opt(f[9])?,
                failure,
            })
        })
        .collect()
}

// ------------------------------------------------------------ report files

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "records.csv";
pub const REPORT_SUMMARY: &str = "summary.txt";

/// Writes `report.json`, `records.csv` and `summary.txt` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), IoError> {
    write_text(&dir.join(REPORT_JSON), &to_json_pretty(report))?;
    write_text(&dir.join(REPORT_CSV), &records_csv(&report.records))?;
    write_text(&dir.join(REPORT_SUMMARY), &report.summary_table())
}

pub fn read_report(path: &Path) -> Result<EvalReport, IoError> {
    parse_json(&read_text(path)?)
}

// ------------------------------------------------------------------ configs

/// Settings shared by the pipeline subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Physics preset name or path of a parameter file.
    pub physics: String,
    pub seg: SegConfig,
    pub calib: CalibConfig,
    pub tracker: TrackerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            physics: "tabletennis".into(),
            seg: SegConfig::default(),
            calib: CalibConfig::default(),
            tracker: TrackerConfig::default(),
        }
    }
}

/// Resolves a physics preset name or reads a JSON parameter file.
pub fn load_physics(spec: &str) -> Result<PhysParams, IoError> {
    if let Some(p) = PhysParams::from_name(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(IoError::Invalid(format!(
            "unknown physics {spec:?}: expected tabletennis, tennis-grass, tennis-clay or a file"
        )));
    }
    let p: PhysParams = parse_json(&read_text(path)?)?;
    p.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(p)
}

pub fn read_track(path: &Path) -> Result<RallyTrack, IoError> {
    let dets = read_jsonl(path)?;
    RallyTrack::new(dets).map_err(|e| IoError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeom::TableModel;
    use crate::rallyseg::Detection;

    fn cam() -> CalibratedCamera {
        let table = TableModel::ittf();
        let mut c = CalibratedCamera::new(
            Intrinsics::new(1234.5678, 1280, 720).unwrap(),
            Pose::look_at(Vector3::new(1.3, -5.1, 2.9), table.center()),
        );
        c.reprojection_rmse = 0.1 + 0.2;
        c
    }

    fn assert_roundtrip<T: Serialize + DeserializeOwned>(records: &[T]) {
        let a = to_jsonl(records);
        let back: Vec<T> = parse_jsonl(&a).unwrap();
        assert_eq!(to_jsonl(&back), a);
    }

    #[test]
    fn camera_record_preserves_camera() {
        let c = cam();
        let r = CameraRecord::from_camera(7, 0.28, &c, true);
        let text = to_jsonl(&[r]);
        let back: Vec<CameraRecord> = parse_jsonl(&text).unwrap();
        assert_eq!(back[0], r);
        let c2 = back[0].camera().unwrap();
        assert_eq!(c2.pose.r, c.pose.r);
        assert_eq!(c2.pose.t, c.pose.t);
        assert_eq!(c2.intrinsics, c.intrinsics);
        assert!(text.contains("\"R\":") && text.contains("\"T\":"));
    }

    #[test]
    fn detections_roundtrip_with_and_without_blur() {
        let mut d = vec![Detection::new(0, 0.0, 1.0 / 3.0, 2.0 / 7.0), Detection::new(1, 0.04, 640.125, 1e-17)];
        d[1].blur_angle = Some(-1.2345678901234567);
        d[1].blur_length = Some(3.5);
        assert_roundtrip(&d);
        assert!(!to_jsonl(&d).lines().next().unwrap().contains("theta"));
    }

    #[test]
    fn keypoints_parse_labels() {
        let text = r#"{"frame":3,"t":0.12,"points":[{"label":"corner0","u":1.5,"v":2.0},{"label":"midline_back","u":3,"v":4}]}
{"frame":4,"t":0.16,"points":[{"u":1,"v":2},{"u":3,"v":4},{"u":5,"v":6},{"u":7,"v":8}]}"#;
        let frames: Vec<KeypointFrame> = parse_jsonl(text).unwrap();
        assert_eq!(frames[0].points[1].label, Some(TableFeature::MidlineBack));
        assert!(frames[1].points.iter().all(|p| p.label.is_none()));
        assert_roundtrip(&frames);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_jsonl::<Detection>("{\"frame\":0,\"t\":0,\"u\":1,\"v\":2}\n\n{oops}\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let states: Vec<BallState> = (0..20)
            .map(|k| {
                let t = k as f64 / 7.0;
                BallState::new(Vector3::new(t.sin(), -1.0 / (t + 3.0), 0.76 + t * t), Vector3::zeros(), Vector3::zeros(), t)
            })
            .collect();
        let a = trajectory_csv(&states);
        let rows = parse_trajectory_csv(&a).unwrap();
        assert_eq!(rows.len(), 20);
        assert_eq!(rows[3][0], 3.0 / 7.0);
        assert_eq!(trajectory_rows_csv(&rows), a);
    }

    #[test]
    fn records_csv_roundtrip_with_quotes() {
        let rec = |i: usize, failure: Option<&str>| TrajectoryRecord {
            index: i,
            view: ViewName::Oblique,
            noisy: i.is_multiple_of(2),
            calibration: if i.is_multiple_of(3) { CalibMode::Known } else { CalibMode::Estimated },
            n_detections: 17,
            n_observations: 15,
            success: failure.is_none(),
            mae_cm: failure.is_none().then_some(2.0 / 3.0),
            reproj_rmse: Some(0.1 + 0.2),
            bounce_dt: None,
            failure: failure.map(String::from),
        };
        let records = vec![rec(0, None), rec(1, Some("no bounce, \"detected\"")), rec(2, Some(""))];
        let a = records_csv(&records);
        let back = parse_records_csv(&a).unwrap();
        assert_eq!(back, records);
        assert_eq!(records_csv(&back), a);
    }

    #[test]
    fn physics_names_and_files() {
        assert_eq!(load_physics("tennis-clay").unwrap(), PhysParams::tennis(crate::physics::Surface::Clay));
        assert!(load_physics("squash").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        let mut params = PhysParams::table_tennis();
        params.k_cor = 0.8;
        write_text(&p, &to_json_pretty(&params)).unwrap();
        assert_eq!(load_physics(p.to_str().unwrap()).unwrap(), params);
    }

    #[test]
    fn run_config_partial_file_uses_defaults() {
        let c: RunConfig = parse_json(r#"{"seg":{"lambda":12.5}}"#).unwrap();
        assert_eq!(c.seg.lambda, 12.5);
        assert_eq!(c.seg.min_segment_len, SegConfig::default().min_segment_len);
        assert_eq!(c.physics, "tabletennis");
        let text = to_json_pretty(&c);
        assert_eq!(to_json_pretty(&parse_json::<RunConfig>(&text).unwrap()), text);
    }
}
