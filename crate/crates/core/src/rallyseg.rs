//! Rally segmentation: piecewise quadratic fits of the 2D ball track with a
//! per-segment penalty, solved exactly by dynamic programming, plus bounce
//! and strike localization at the junctions.

use nalgebra::{Matrix3, Matrix5, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camgeom::{intersect_ray_plane, CalibratedCamera, TableModel};
use crate::lsq::golden_section;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegError {
    #[error("a segment needs at least 3 detections, got {0}")]
    TooFewPoints(usize),
    #[error("detection has no blur angle")]
    NoBlurData,
    #[error("track has {len} detections, need at least {min}")]
    TrackTooShort { len: usize, min: usize },
    #[error("curves do not meet inside the event window (closest {distance:.1} px)")]
    NoIntersectionInWindow { distance: f64 },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: i64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    #[serde(rename = "theta", default, skip_serializing_if = "Option::is_none")]
    pub blur_angle: Option<f64>,
    #[serde(rename = "blur_len", default, skip_serializing_if = "Option::is_none")]
    pub blur_length: Option<f64>,
}

impl Detection {
    pub fn new(frame: i64, t: f64, u: f64, v: f64) -> Self {
        Self { frame, t, u, v, blur_angle: None, blur_length: None }
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Detections of one rally, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct RallyTrack {
    detections: Vec<Detection>,
}

impl RallyTrack {
    pub fn new(detections: Vec<Detection>) -> Result<Self, SegError> {
        for w in detections.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SegError::InvalidTrack(format!("timestamps not increasing at frame {}", w[1].frame)));
            }
            if w[1].frame <= w[0].frame {
                return Err(SegError::InvalidTrack(format!("frame indices not increasing at {}", w[1].frame)));
            }
        }
        if detections.iter().any(|d| !(d.t.is_finite() && d.u.is_finite() && d.v.is_finite())) {
            return Err(SegError::InvalidTrack("non-finite detection".into()));
        }
        Ok(Self { detections })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn has_blur(&self) -> bool {
        self.detections.iter().any(|d| d.blur_angle.is_some())
    }

    /// Median time per frame index step.
    pub fn frame_interval(&self) -> f64 {
        let mut dts: Vec<f64> = self
            .detections
            .windows(2)
            .map(|w| (w[1].t - w[0].t) / (w[1].frame - w[0].frame) as f64)
            .collect();
        if dts.is_empty() {
            return 1.0 / 25.0;
        }
        dts.sort_by(f64::total_cmp);
        dts[dts.len() / 2]
    }

    /// Robust per-axis position noise, px, from third differences over runs
    /// of four consecutive frames. `None` with fewer than two such runs.
    pub fn position_noise(&self) -> Option<f64> {
        let mut d3: Vec<f64> = Vec::new();
        for w in self.detections.windows(4) {
            if w[3].frame - w[0].frame != 3 {
                continue;
            }
            d3.push((w[3].u - 3.0 * w[2].u + 3.0 * w[1].u - w[0].u).abs());
            d3.push((w[3].v - 3.0 * w[2].v + 3.0 * w[1].v - w[0].v).abs());
        }
        if d3.len() < 4 {
            return None;
        }
        d3.sort_by(f64::total_cmp);
        let mad = d3[d3.len() / 2];
        // a third difference of white noise has variance 20 sigma^2
        Some(1.4826 * mad / 20f64.sqrt())
    }
}

/// Quadratic `c[0] + c[1] t + c[2] t^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poly2(pub [f64; 3]);

impl Poly2 {
    pub fn eval(&self, t: f64) -> f64 {
        self.0[0] + t * (self.0[1] + t * self.0[2])
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.0[1] + 2.0 * self.0[2] * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_idx: usize,
    /// Inclusive.
    pub end_idx: usize,
    pub coeff_u: Poly2,
    pub coeff_v: Poly2,
    /// Summed absolute residual over both axes, px.
    pub fit_cost: f64,
}

impl Segment {
    pub fn point(&self, t: f64) -> Vector2<f64> {
        Vector2::new(self.coeff_u.eval(t), self.coeff_v.eval(t))
    }

    pub fn velocity(&self, t: f64) -> Vector2<f64> {
        Vector2::new(self.coeff_u.deriv(t), self.coeff_v.deriv(t))
    }

    pub fn len(&self) -> usize {
        self.end_idx - self.start_idx + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    /// Cost of opening a segment, px.
    pub lambda: f64,
    /// Added to `lambda` per px of estimated position noise by `for_track`.
    pub noise_lambda: f64,
    /// px per radian of blur-direction mismatch.
    pub blur_weight: f64,
    pub min_segment_len: usize,
    /// Largest frame-index gap a segment may span.
    pub max_gap_frames: i64,
    /// Event search extends this many frame intervals past the junction.
    pub event_window_frames: f64,
    /// Closest-approach gate for a valid junction, px.
    pub event_gate: f64,
    /// Detections on each side of a junction fitted jointly to time the
    /// event; below 3 the closest approach of the full segment fits is used.
    pub event_fit_points: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            lambda: 30.0,
            noise_lambda: 15.0,
            blur_weight: 15.0,
            min_segment_len: 3,
            max_gap_frames: 6,
            event_window_frames: 2.0,
            event_gate: 20.0,
            event_fit_points: 4,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if !(self.lambda > 0.0) || !(self.noise_lambda >= 0.0) || !(self.blur_weight >= 0.0) || self.min_segment_len < 3
        {
            return Err(SegError::InvalidConfig(
                "need lambda > 0, noise_lambda >= 0, blur_weight >= 0, min_segment_len >= 3".into(),
            ));
        }
        Ok(())
    }

    /// Settings for one track: the segment cost grows with the track's
    /// estimated position noise, and blur is dropped when the track has none.
    pub fn for_track(&self, track: &RallyTrack) -> SegConfig {
        let mut cfg = *self;
        cfg.lambda += cfg.noise_lambda * track.position_noise().unwrap_or(0.0);
        cfg.noise_lambda = 0.0;
        if !track.has_blur() {
            cfg.blur_weight = 0.0;
        }
        cfg
    }
}

const IRLS_ROUNDS: usize = 3;

/// Weighted least-squares quadratic in the normalized time `tau`.
fn weighted_quadratic(tau: &[f64], y: &[f64], w: &[f64]) -> [f64; 3] {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for ((&x, &yk), &wk) in tau.iter().zip(y).zip(w) {
        let phi = Vector3::new(1.0, x, x * x);
        a += wk * phi * phi.transpose();
        b += wk * yk * phi;
    }
    let sol = a.lu().solve(&b).unwrap_or_else(Vector3::zeros);
    [sol.x, sol.y, sol.z]
}

fn l1_quadratic(tau: &[f64], y: &[f64]) -> [f64; 3] {
    let mut w = vec![1.0; tau.len()];
    let mut c = weighted_quadratic(tau, y, &w);
    for _ in 0..IRLS_ROUNDS {
        for (k, (&x, &yk)) in tau.iter().zip(y).enumerate() {
            let r = (yk - (c[0] + x * (c[1] + x * c[2]))).abs();
            w[k] = 1.0 / r.max(1e-3);
        }
        c = weighted_quadratic(tau, y, &w);
    }
    c
}

/// Coefficients in `tau = (t - m) / s` re-expressed in `t`.
fn to_absolute(c: [f64; 3], m: f64, s: f64) -> Poly2 {
    let (a, b, q) = (c[0], c[1] / s, c[2] / (s * s));
    Poly2([a - b * m + q * m * m, b - 2.0 * q * m, q])
}

/// Least-absolute-deviation quadratic fit of `u(t)` and `v(t)` over detections `i..=j`.
pub fn fit_segment(track: &RallyTrack, i: usize, j: usize) -> Result<Segment, SegError> {
    if j < i + 2 || j >= track.len() {
        return Err(SegError::TooFewPoints(j.saturating_sub(i) + 1));
    }
    let dets = &track.detections()[i..=j];
    let m = 0.5 * (dets[0].t + dets[dets.len() - 1].t);
    let s = (0.5 * (dets[dets.len() - 1].t - dets[0].t)).max(1e-9);
    let tau: Vec<f64> = dets.iter().map(|d| (d.t - m) / s).collect();
    let us: Vec<f64> = dets.iter().map(|d| d.u).collect();
    let vs: Vec<f64> = dets.iter().map(|d| d.v).collect();
    let cu = l1_quadratic(&tau, &us);
    let cv = l1_quadratic(&tau, &vs);
    let ev = |c: &[f64; 3], x: f64| c[0] + x * (c[1] + x * c[2]);
    let fit_cost = tau
        .iter()
        .zip(us.iter().zip(&vs))
        .map(|(&x, (&u, &v))| (u - ev(&cu, x)).abs() + (v - ev(&cv, x)).abs())
        .sum();
    Ok(Segment {
        start_idx: i,
        end_idx: j,
        coeff_u: to_absolute(cu, m, s),
        coeff_v: to_absolute(cv, m, s),
        fit_cost,
    })
}

/// Axial distance in `[0, pi/2]` between two line orientations.
pub fn axial_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Angle between the observed blur streak and the fitted image velocity, mod pi.
pub fn blur_residual(seg: &Segment, det: &Detection) -> Result<f64, SegError> {
    let theta = det.blur_angle.ok_or(SegError::NoBlurData)?;
    let vel = seg.velocity(det.t);
    Ok(axial_angle_diff(theta, vel.y.atan2(vel.x)))
}

fn segment_objective(track: &RallyTrack, seg: &Segment, cfg: &SegConfig) -> f64 {
    let blur: f64 = if cfg.blur_weight > 0.0 {
        track.detections()[seg.start_idx..=seg.end_idx]
            .iter()
            .filter_map(|d| blur_residual(seg, d).ok())
            .sum()
    } else {
        0.0
    };
    seg.fit_cost + cfg.blur_weight * blur
}

/// Cost of the segment `i..=j` including the opening penalty, or `None` when
/// the segment is not allowed.
pub fn segment_cost(track: &RallyTrack, i: usize, j: usize, cfg: &SegConfig) -> Option<(Segment, f64)> {
    if j + 1 < i + cfg.min_segment_len {
        return None;
    }
    let dets = track.detections();
    if dets[i..=j].windows(2).any(|w| w[1].frame - w[0].frame > cfg.max_gap_frames) {
        return None;
    }
    let seg = fit_segment(track, i, j).ok()?;
    let c = segment_objective(track, &seg, cfg) + cfg.lambda;
    Some((seg, c))
}

/// Total objective of a segmentation given as segments covering the track.
pub fn segmentation_objective(track: &RallyTrack, segments: &[Segment], cfg: &SegConfig) -> f64 {
    segments.iter().map(|s| segment_objective(track, s, cfg) + cfg.lambda).sum()
}

/// Optimal segmentation by dynamic programming over breakpoints.
pub fn segment_rally(track: &RallyTrack, cfg: &SegConfig) -> Result<Vec<Segment>, SegError> {
    cfg.validate()?;
    let n = track.len();
    if n < cfg.min_segment_len {
        return Err(SegError::TrackTooShort { len: n, min: cfg.min_segment_len });
    }
    // best[j]: optimal cost of covering detections 0..j (exclusive)
    let mut best = vec![f64::INFINITY; n + 1];
    let mut back: Vec<Option<(usize, Segment)>> = vec![None; n + 1];
    best[0] = 0.0;
    for j in cfg.min_segment_len..=n {
        for i in 0..=j - cfg.min_segment_len {
            if !best[i].is_finite() {
                continue;
            }
            if let Some((seg, c)) = segment_cost(track, i, j - 1, cfg) {
                let total = best[i] + c;
                if total < best[j] {
                    best[j] = total;
                    back[j] = Some((i, seg));
                }
            }
        }
    }
    if !best[n].is_finite() {
        return Err(SegError::InvalidTrack("no admissible segmentation (gaps leave too few detections)".into()));
    }
    let mut segs = Vec::new();
    let mut j = n;
    while j > 0 {
        let (i, seg) = back[j].take().expect("backpointer");
        segs.push(seg);
        j = i;
    }
    segs.reverse();
    Ok(segs)
}

/// Sub-frame junction time and image point of two consecutive segments: the
/// closest approach of the two fitted curves near the junction.
pub fn locate_event(
    track: &RallyTrack,
    left: &Segment,
    right: &Segment,
    cfg: &SegConfig,
) -> Result<(f64, Vector2<f64>), SegError> {
    let dets = track.detections();
    let delta = cfg.event_window_frames * track.frame_interval();
    let a = dets[left.end_idx].t - delta;
    let b = dets[right.start_idx].t + delta;
    let dist = |t: f64| (left.point(t) - right.point(t)).norm();
    const SAMPLES: usize = 256;
    let h = (b - a) / SAMPLES as f64;
    let k = (0..=SAMPLES).min_by(|&x, &y| dist(a + x as f64 * h).total_cmp(&dist(a + y as f64 * h))).unwrap();
    let lo = (a + (k as f64 - 1.0) * h).max(a);
    let hi = (a + (k as f64 + 1.0) * h).min(b);
    let (t_star, d) = golden_section(dist, lo, hi, 1e-12);
    if d > cfg.event_gate {
        return Err(SegError::NoIntersectionInWindow { distance: d });
    }
    Ok((t_star, 0.5 * (left.point(t_star) + right.point(t_star))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TableBounce,
    RacketStrike,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub t_star: f64,
    pub image_point: Vector2<f64>,
    pub left_segment: usize,
    pub right_segment: usize,
    /// The longitudinal direction could not be resolved; kind defaulted.
    pub low_confidence: bool,
}

/// Residual sum of squares of two quadratics constrained to meet at `tau`,
/// fitted to `dets`, and the meeting point.
fn kink_fit(dets: &[Detection], tau: f64) -> Option<(f64, Vector2<f64>)> {
    let row = |t: f64| {
        let s = t - tau;
        if t <= tau {
            [1.0, s, s * s, 0.0, 0.0]
        } else {
            [1.0, 0.0, 0.0, s, s * s]
        }
    };
    let before = dets.iter().filter(|d| d.t <= tau).count();
    if before < 2 || dets.len() - before < 2 {
        return None;
    }
    let mut ata = Matrix5::zeros();
    let mut atb = nalgebra::Matrix5x2::zeros();
    for d in dets {
        let r = nalgebra::RowVector5::from(row(d.t));
        ata += r.transpose() * r;
        atb += r.transpose() * nalgebra::RowVector2::new(d.u, d.v);
    }
    let x = ata.cholesky()?.solve(&atb);
    let rss = dets
        .iter()
        .map(|d| {
            let r = nalgebra::RowVector5::from(row(d.t));
            (r * x - nalgebra::RowVector2::new(d.u, d.v)).norm_squared()
        })
        .sum();
    Some((rss, Vector2::new(x[(0, 0)], x[(0, 1)])))
}

/// Junction time from a joint fit of the last and first `k` detections of two
/// segments, with the curves constrained to meet. Unlike intersecting separate
/// fits, a detection next to the event joins whichever side the candidate
/// time puts it on.
pub fn locate_kink(track: &RallyTrack, left: &Segment, right: &Segment, k: usize) -> Option<(f64, Vector2<f64>)> {
    let dets = track.detections();
    let lo = left.start_idx.max((left.end_idx + 1).saturating_sub(k));
    let hi = right.end_idx.min(right.start_idx + k - 1);
    let window = &dets[lo..=hi];
    // the event lies within a frame of the boundary detections
    let a = dets[left.end_idx.saturating_sub(1).max(lo)].t;
    let b = dets[(right.start_idx + 1).min(hi)].t;
    let cost = |t: f64| kink_fit(window, t).map_or(f64::INFINITY, |f| f.0);
    const SAMPLES: usize = 128;
    let h = (b - a) / SAMPLES as f64;
    let best = (0..=SAMPLES).min_by(|&x, &y| cost(a + x as f64 * h).total_cmp(&cost(a + y as f64 * h)))?;
    if !cost(a + best as f64 * h).is_finite() {
        return None;
    }
    let (t, _) = golden_section(cost, (a + (best as f64 - 1.0) * h).max(a), (a + (best as f64 + 1.0) * h).min(b), 1e-12);
    kink_fit(window, t).map(|(_, p)| (t, p))
}

/// Junctions of consecutive segments that meet inside the event window.
pub fn find_events(track: &RallyTrack, segments: &[Segment], cfg: &SegConfig) -> Vec<(usize, f64, Vector2<f64>)> {
    let dets = track.detections();
    let mut out = Vec::new();
    for k in 0..segments.len().saturating_sub(1) {
        let (l, r) = (&segments[k], &segments[k + 1]);
        if dets[r.start_idx].frame - dets[l.end_idx].frame > cfg.max_gap_frames {
            continue;
        }
        match locate_event(track, l, r, cfg) {
            Ok((t, p)) => {
                let refined = if cfg.event_fit_points >= 3 { locate_kink(track, l, r, cfg.event_fit_points) } else { None };
                let (t, p) = refined.unwrap_or((t, p));
                out.push((k, t, p))
            }
            Err(e) => log::debug!("segments {k}/{}: {e}", k + 1),
        }
    }
    out
}

/// Longitudinal (world Y) displacement of an image path, measured on the
/// radius-offset table plane.
fn longitudinal_shift(cam: &CalibratedCamera, plane_z: f64, from: Vector2<f64>, to: Vector2<f64>) -> Option<f64> {
    let n = Vector3::z_axis();
    let x_plane = Vector3::new(0.0, 0.0, plane_z);
    let a = intersect_ray_plane(&cam.pixel_ray(from.x, from.y), &n, &x_plane).ok()?;
    let b = intersect_ray_plane(&cam.pixel_ray(to.x, to.y), &n, &x_plane).ok()?;
    // rays that meet the plane behind the camera carry no usable direction
    let c = cam.center();
    let fwd = |p: &Vector3<f64>| (p - c).dot(&cam.pose.r.row(2).transpose()) > 0.0;
    (fwd(&a) && fwd(&b)).then_some(b.y - a.y)
}

/// Horizon used to measure the travel direction on each side of an event.
const DIRECTION_FRAMES: f64 = 3.0;

/// Labels each junction: a sign change of the longitudinal travel direction
/// is a racket strike, anything else a table bounce.
pub fn classify_events(
    track: &RallyTrack,
    segments: &[Segment],
    junctions: &[(usize, f64, Vector2<f64>)],
    cam: &CalibratedCamera,
    table: &TableModel,
    ball_radius: f64,
) -> Vec<Event> {
    let dets = track.detections();
    let horizon = DIRECTION_FRAMES * track.frame_interval();
    let plane_z = table.height + ball_radius;
    junctions
        .iter()
        .map(|&(k, t_star, point)| {
            let (l, r) = (&segments[k], &segments[k + 1]);
            let t_before = (t_star - horizon).max(dets[l.start_idx].t).min(t_star);
            let t_after = (t_star + horizon).min(dets[r.end_idx].t).max(t_star);
            let before = longitudinal_shift(cam, plane_z, l.point(t_before), l.point(t_star));
            let after = longitudinal_shift(cam, plane_z, r.point(t_star), r.point(t_after));
            let (kind, low_confidence) = match (before, after) {
                (Some(b), Some(a)) if b.abs() > 1e-2 && a.abs() > 1e-2 => {
                    if b.signum() != a.signum() {
                        (EventKind::RacketStrike, false)
                    } else {
                        (EventKind::TableBounce, false)
                    }
                }
                _ => (EventKind::TableBounce, true),
            };
            Event { kind, t_star, image_point: point, left_segment: k, right_segment: k + 1, low_confidence }
        })
        .collect()
}
