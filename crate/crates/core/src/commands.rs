//! File-to-file operations behind the command-line subcommands.
//!
//! Exit codes: 0 success, 1 output failure, 2 unreadable or invalid input,
//! 3 valid input with an empty or degenerate result.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::calib::{disambiguate_corners, estimate_focal, track_camera, CalibError, Correspondence};
use crate::camgeom::{CalibratedCamera, TableModel};
use crate::io::{
    camera_stream, load_physics, parse_json, parse_jsonl, parse_trajectory_csv, read_jsonl, read_report, read_text,
    read_track, to_jsonl, trajectory_csv, write_jsonl, write_report, write_text, CameraRecord, EventRecord,
    IoError, KeypointFrame, ResultRecord, RunConfig, SegmentRecord,
};
use crate::physics::PhysParams;
use crate::pipeline::{analyze_rally, label_events, PipelineConfig, PipelineError};
use crate::plot::{mae_scatter_svg, trajectories_svg};
use crate::rallyseg::{find_events, segment_rally, EventKind, RallyTrack, SegConfig, SegError};
use crate::recon::{ReconConfig, ReconError};
use crate::synthbench::{run_benchmark, BenchConfig, EvalReport};

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
    #[error("{0}")]
    Output(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Output(_) => 1,
            CmdError::Input(_) => 2,
            CmdError::Empty(_) => 3,
        }
    }
}

fn input(e: IoError) -> CmdError {
    CmdError::Input(e.to_string())
}

fn output(e: IoError) -> CmdError {
    CmdError::Output(e.to_string())
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig, CmdError> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let cfg: RunConfig = parse_json(&read_text(path).map_err(input)?).map_err(input)?;
    cfg.seg.validate().map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
    cfg.calib.validate().map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn load_bench_config(path: Option<&Path>) -> Result<BenchConfig, CmdError> {
    let Some(path) = path else { return Ok(BenchConfig::default()) };
    parse_json(&read_text(path).map_err(input)?).map_err(input)
}

fn physics(cfg: &RunConfig) -> Result<PhysParams, CmdError> {
    load_physics(&cfg.physics).map_err(input)
}

fn load_track(path: &Path) -> Result<RallyTrack, CmdError> {
    let track = read_track(path).map_err(input)?;
    if track.is_empty() {
        return Err(CmdError::Input(format!("{}: no detections", path.display())));
    }
    Ok(track)
}

fn load_cameras(path: &Path) -> Result<Vec<(f64, CalibratedCamera)>, CmdError> {
    let records: Vec<CameraRecord> = read_jsonl(path).map_err(input)?;
    if records.is_empty() {
        return Err(CmdError::Input(format!("{}: no calibration records", path.display())));
    }
    camera_stream(&records).map_err(input)
}

/// Segmentation settings for a track, warning when blur terms are dropped.
fn effective_seg(track: &RallyTrack, seg: &SegConfig) -> SegConfig {
    if seg.blur_weight > 0.0 && !track.has_blur() {
        log::warn!("detections carry no blur angles; segmenting on positions only");
    }
    let seg = seg.for_track(track);
    log::info!("segment cost {:.1} px", seg.lambda);
    seg
}

fn seg_error(e: SegError) -> CmdError {
    match e {
        SegError::TrackTooShort { .. } => CmdError::Empty(e.to_string()),
        _ => CmdError::Input(e.to_string()),
    }
}

// --------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrateSummary {
    pub frames: usize,
    pub calibrated: usize,
    pub written: usize,
}

fn calibrate_frame(frame: &KeypointFrame, table: &TableModel, cfg: &RunConfig) -> Result<CalibratedCamera, String> {
    let labelled = frame.points.iter().filter(|p| p.label.is_some()).count();
    if labelled == frame.points.len() && labelled >= 4 {
        let corrs: Vec<Correspondence> = frame
            .points
            .iter()
            .map(|p| Correspondence::new(table, p.label.expect("checked"), Vector2::new(p.u, p.v)))
            .collect();
        estimate_focal(&corrs, table, &cfg.calib).map(|e| e.camera).map_err(|e| e.to_string())
    } else if labelled == 0 && frame.points.len() == 4 {
        let px = frame.pixels();
        let d = disambiguate_corners(&[px[0], px[1], px[2], px[3]], table, &cfg.calib).map_err(|e| e.to_string())?;
        if d.ambiguous {
            log::warn!("frame {}: corner ordering is ambiguous", frame.frame);
        }
        Ok(d.camera)
    } else {
        Err(format!("expected at least 4 labelled points or 4 unlabelled corners, got {} points", frame.points.len()))
    }
}

/// Calibrates every keypoint frame, filters the camera stream and writes one
/// record per frame from the first successful calibration on.
pub fn cmd_calibrate(keypoints: &Path, out: &Path, cfg: &RunConfig) -> Result<CalibrateSummary, CmdError> {
    let mut frames: Vec<KeypointFrame> = read_jsonl(keypoints).map_err(input)?;
    if frames.is_empty() {
        return Err(CmdError::Input(format!("{}: no keypoint frames", keypoints.display())));
    }
    frames.sort_by(|a, b| a.t.total_cmp(&b.t));
    if frames.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(CmdError::Input(format!("{}: duplicate timestamps", keypoints.display())));
    }
    let table = TableModel::ittf();
    let cams: Vec<Option<CalibratedCamera>> = frames
        .par_iter()
        .map(|f| match calibrate_frame(f, &table, cfg) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("frame {}: calibration failed: {e}", f.frame);
                None
            }
        })
        .collect();
    let calibrated = cams.iter().filter(|c| c.is_some()).count();
    let stream: Vec<(f64, Option<CalibratedCamera>)> = frames.iter().map(|f| f.t).zip(cams).collect();
    let tracked = match track_camera(&stream, &cfg.tracker) {
        Ok(t) => t,
        Err(CalibError::EmptyStream) => return Err(CmdError::Empty("no frame could be calibrated".into())),
        Err(e) => return Err(CmdError::Input(e.to_string())),
    };
    let first = stream.iter().position(|(_, c)| c.is_some()).expect("stream is not empty");
    let records: Vec<CameraRecord> = frames[first..]
        .iter()
        .zip(&tracked)
        .map(|(f, tc)| CameraRecord::from_camera(f.frame, tc.t, &tc.camera, tc.accepted))
        .collect();
    write_jsonl(out, &records).map_err(output)?;
    log::info!("calibrated {calibrated}/{} frames", frames.len());
    Ok(CalibrateSummary { frames: frames.len(), calibrated, written: records.len() })
}

// ----------------------------------------------------------------- segment

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSummary {
    pub segments: usize,
    pub events: usize,
    pub bounces: usize,
}

/// Segments a track and writes the arcs and their junctions. With a
/// calibration the junctions are labelled as bounces or strikes.
pub fn cmd_segment(
    detections: &Path,
    calibration: Option<&Path>,
    segments_out: &Path,
    events_out: &Path,
    cfg: &RunConfig,
) -> Result<SegmentSummary, CmdError> {
    let track = load_track(detections)?;
    let seg = effective_seg(&track, &cfg.seg);
    let segments = segment_rally(&track, &seg).map_err(seg_error)?;
    let junctions = find_events(&track, &segments, &seg);
    let events: Vec<EventRecord> = match calibration {
        Some(path) => {
            let cameras = load_cameras(path)?;
            let params = physics(cfg)?;
            let pcfg = PipelineConfig { seg, ..PipelineConfig::default() };
            label_events(&track, &segments, &junctions, &cameras, &params, &pcfg)
                .map_err(|e| CmdError::Input(e.to_string()))?
                .iter()
                .map(EventRecord::from_event)
                .collect()
        }
        None => junctions.iter().map(|&(k, t, p)| EventRecord::from_junction(k, t, p)).collect(),
    };
    let records: Vec<SegmentRecord> = segments.iter().map(|s| SegmentRecord::from_segment(&track, s)).collect();
    write_jsonl(segments_out, &records).map_err(output)?;
    write_jsonl(events_out, &events).map_err(output)?;
    let bounces = events.iter().filter(|e| e.kind == Some(EventKind::TableBounce)).count();
    Ok(SegmentSummary { segments: records.len(), events: events.len(), bounces })
}

// ------------------------------------------------------------- reconstruct

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRAJECTORY_SVG: &str = "trajectories.svg";

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructSummary {
    pub records: Vec<ResultRecord>,
    pub trajectory_files: Vec<PathBuf>,
}

/// Runs the full pipeline and writes `results.jsonl`, one `bounce_NN.csv` per
/// reconstructed bounce and, on request, `trajectories.svg` into `out_dir`.
pub fn cmd_reconstruct(
    detections: &Path,
    calibration: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
    svg: bool,
) -> Result<ReconstructSummary, CmdError> {
    let track = load_track(detections)?;
    let cameras = load_cameras(calibration)?;
    let params = physics(cfg)?;
    let pcfg = PipelineConfig { seg: effective_seg(&track, &cfg.seg), recon: ReconConfig::default(), table: TableModel::ittf() };
    let analysis = analyze_rally(&track, &cameras, &params, &pcfg).map_err(|e| match e {
        PipelineError::Segmentation(s) => seg_error(s),
        PipelineError::NoCamera => CmdError::Input(e.to_string()),
    })?;
    if analysis.bounces.is_empty() {
        return Err(CmdError::Empty(format!("no table bounce among {} events", analysis.events.len())));
    }
    let mut records = Vec::new();
    let mut files = Vec::new();
    let mut paths = Vec::new();
    for (k, b) in analysis.bounces.iter().enumerate() {
        let res = match &b.result {
            Ok(r) => Some(r),
            Err(ReconError::NoConvergence { best }) => Some(best.as_ref()),
            Err(e) => {
                log::warn!("bounce at t = {:.3} s: {e}", b.event.t_star);
                None
            }
        };
        let name = res.map(|r| {
            let name = format!("bounce_{k:02}.csv");
            let text = trajectory_csv(&r.trajectory);
            paths.push(parse_trajectory_csv(&text).expect("written by trajectory_csv"));
            (name, text)
        });
        if let Some((name, text)) = &name {
            let path = out_dir.join(name);
            write_text(&path, text).map_err(output)?;
            files.push(path);
        }
        records.push(ResultRecord::from_bounce(b, name.map(|n| n.0)));
    }
    write_text(&out_dir.join(RESULTS_FILE), &to_jsonl(&records)).map_err(output)?;
    if svg {
        write_text(&out_dir.join(TRAJECTORY_SVG), &trajectories_svg(&paths, &pcfg.table)).map_err(output)?;
    }
    Ok(ReconstructSummary { records, trajectory_files: files })
}

// ------------------------------------------------------------------- bench

pub const MAE_SVG: &str = "mae.svg";

/// Runs the synthetic benchmark and writes the report files into `out_dir`.
pub fn cmd_bench(cfg: &BenchConfig, out_dir: &Path, svg: bool) -> Result<EvalReport, CmdError> {
    cfg.validate().map_err(|e| CmdError::Input(e.to_string()))?;
    let report = run_benchmark(cfg).map_err(|e| CmdError::Input(e.to_string()))?;
    write_report(out_dir, &report).map_err(output)?;
    if svg {
        write_text(&out_dir.join(MAE_SVG), &mae_scatter_svg(&report)).map_err(output)?;
    }
    Ok(report)
}

// -------------------------------------------------------------------- plot

/// Plots a benchmark report (`.json`) as an MAE scatter, or trajectory CSVs
/// as top-down and side views.
pub fn cmd_plot(inputs: &[PathBuf], out: &Path) -> Result<(), CmdError> {
    if inputs.is_empty() {
        return Err(CmdError::Input("nothing to plot".into()));
    }
    let is_report = |p: &PathBuf| p.extension().is_some_and(|e| e == "json");
    let svg = if inputs.iter().all(is_report) {
        if inputs.len() != 1 {
            return Err(CmdError::Input("plot takes a single report".into()));
        }
        mae_scatter_svg(&read_report(&inputs[0]).map_err(input)?)
    } else if inputs.iter().any(is_report) {
        return Err(CmdError::Input("cannot mix reports and trajectory files".into()));
    } else {
        let paths = inputs
            .iter()
            .map(|p| {
                read_text(p)
                    .and_then(|t| parse_trajectory_csv(&t))
                    .map_err(|e| CmdError::Input(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        trajectories_svg(&paths, &TableModel::ittf())
    };
    write_text(out, &svg).map_err(output)
}

/// Re-reads a JSON-lines file and writes it back in canonical form.
pub fn canonicalize_jsonl<T: serde::de::DeserializeOwned + serde::Serialize>(text: &str) -> Result<String, IoError> {
    parse_jsonl::<T>(text).map(|r| to_jsonl(&r))
}
