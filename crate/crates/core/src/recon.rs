//! 3D reconstruction around a table bounce: anchor the bounce by a ray-plane
//! intersection, then fit the incoming velocity and spin so the simulated
//! flight reprojects onto the detections on both sides of the bounce.

use nalgebra::{DVector, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camgeom::{intersect_ray_plane, CalibratedCamera, CamError, TableModel};
use crate::lsq::{forward_difference_jacobian, levenberg_marquardt, LmConfig};
use crate::physics::{
    apply_bounce, integrate_flight, integrate_to_times, BallState, BounceRegime, CrossingGuard, Direction,
    PhysParams, PhysicsError, DEFAULT_DT,
};
use crate::rallyseg::{Detection, Event, EventKind, RallyTrack, Segment};

/// How far outside the table top an anchor may fall, m.
pub const ANCHOR_MARGIN: f64 = 0.5;
/// Fewest detections a problem may have.
pub const MIN_OBSERVATIONS: usize = 5;
/// Fewer post-bounce detections than this leave the spin weakly constrained.
pub const MIN_POST_OBSERVATIONS: usize = 3;

#[derive(Debug, Error, Clone)]
pub enum ReconError {
    #[error(transparent)]
    Camera(#[from] CamError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("event is not a table bounce")]
    NotABounce,
    #[error("bounce anchor ({x:.2}, {y:.2}) lies outside the table")]
    AnchorOutsideTable { x: f64, y: f64 },
    #[error("{n} observations, need at least {MIN_OBSERVATIONS}")]
    TooFewObservations { n: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("optimizer did not converge (best rmse {:.2} px)", best.reproj_rmse)]
    NoConvergence { best: Box<ReconResult> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconWarning {
    /// Too few post-bounce detections to pin down the spin.
    Identifiability { post_obs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BounceAnchor {
    /// Ball center at contact.
    pub x_bounce: Vector3<f64>,
    pub t_star: f64,
    pub source_event: Event,
}

/// Intersects the event pixel's ray with the plane one ball radius above the
/// table top.
pub fn bounce_anchor(
    cam: &CalibratedCamera,
    event: &Event,
    table: &TableModel,
    r: f64,
) -> Result<BounceAnchor, ReconError> {
    if event.kind != EventKind::TableBounce {
        return Err(ReconError::NotABounce);
    }
    let x = anchor_point(cam, event.image_point, table.height + r)?;
    if !table.contains_xy(&x, ANCHOR_MARGIN) {
        return Err(ReconError::AnchorOutsideTable { x: x.x, y: x.y });
    }
    Ok(BounceAnchor { x_bounce: x, t_star: event.t_star, source_event: *event })
}

fn anchor_point(cam: &CalibratedCamera, px: Vector2<f64>, z: f64) -> Result<Vector3<f64>, CamError> {
    let ray = cam.pixel_ray(px.x, px.y);
    let mut x = intersect_ray_plane(&ray, &Vector3::z_axis(), &Vector3::new(0.0, 0.0, z))?;
    // exactly on the contact plane, so flight from it never starts below the table
    x.z = z;
    let depth = cam.pose.to_camera(&x).z;
    if !(depth > 0.0) {
        return Err(CamError::PointBehindCamera { depth });
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct ReconProblem {
    pub camera: CalibratedCamera,
    pub anchor: BounceAnchor,
    pub pre_obs: Vec<Detection>,
    pub post_obs: Vec<Detection>,
    pub params: PhysParams,
    pub table: TableModel,
    pub init_v: Vector3<f64>,
    pub init_w: Vector3<f64>,
}

impl ReconProblem {
    /// Builds a problem with the default initialization: no spin and
    /// `v = (0, ±5, -3)`, the sign following the observed travel direction.
    pub fn new(
        camera: CalibratedCamera,
        anchor: BounceAnchor,
        pre_obs: Vec<Detection>,
        post_obs: Vec<Detection>,
        params: PhysParams,
        table: TableModel,
    ) -> Result<Self, ReconError> {
        let mut p = Self {
            camera,
            anchor,
            pre_obs,
            post_obs,
            params,
            table,
            init_v: Vector3::new(0.0, 5.0, -3.0),
            init_w: Vector3::zeros(),
        };
        p.validate()?;
        p.init_v.y *= p.longitudinal_sign();
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        self.params.validate()?;
        let t = self.anchor.t_star;
        if self.pre_obs.iter().any(|d| !(d.t < t)) || self.post_obs.iter().any(|d| !(d.t > t)) {
            return Err(ReconError::InvalidProblem("observations on the wrong side of the bounce".into()));
        }
        let sorted = |obs: &[Detection]| obs.windows(2).all(|w| w[0].t < w[1].t);
        if !sorted(&self.pre_obs) || !sorted(&self.post_obs) {
            return Err(ReconError::InvalidProblem("observations not in time order".into()));
        }
        let n = self.pre_obs.len() + self.post_obs.len();
        if n < MIN_OBSERVATIONS {
            return Err(ReconError::TooFewObservations { n });
        }
        Ok(())
    }

    pub fn observations(&self) -> impl Iterator<Item = &Detection> {
        self.pre_obs.iter().chain(&self.post_obs)
    }

    pub fn len(&self) -> usize {
        self.pre_obs.len() + self.post_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sign of the world-Y travel, from detections back-projected onto the
    /// ball-center plane.
    fn longitudinal_sign(&self) -> f64 {
        let z = self.table.height + self.params.r;
        let on_plane = |d: &Detection| anchor_point(&self.camera, d.pixel(), z).ok().map(|p| p.y);
        let y_star = self.anchor.x_bounce.y;
        let mut shift = 0.0;
        if let Some(y) = self.pre_obs.first().and_then(on_plane) {
            shift += y_star - y;
        }
        if let Some(y) = self.post_obs.last().and_then(on_plane) {
            shift += y - y_star;
        }
        if shift < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    fn guard(&self) -> CrossingGuard {
        CrossingGuard::new(self.table, self.params.r)
    }
}

/// Pre-bounce states at the pre-observation times (in time order), and the
/// post-bounce states at the post-observation times.
fn simulate(
    problem: &ReconProblem,
    v_minus: &Vector3<f64>,
    w_minus: &Vector3<f64>,
    dt: f64,
) -> Result<(Vec<BallState>, Vec<BallState>), ReconError> {
    let guard = problem.guard();
    let s_minus = BallState::new(problem.anchor.x_bounce, *v_minus, *w_minus, problem.anchor.t_star);
    let back_times: Vec<f64> = problem.pre_obs.iter().rev().map(|d| d.t).collect();
    let mut pre = integrate_to_times(&s_minus, &problem.params, dt, &back_times, Some(&guard))?;
    pre.reverse();
    let b = apply_bounce(v_minus, w_minus, &problem.params)?;
    let s_plus = BallState::new(problem.anchor.x_bounce, b.v_plus, b.w_plus, problem.anchor.t_star);
    let fwd_times: Vec<f64> = problem.post_obs.iter().map(|d| d.t).collect();
    let post = integrate_to_times(&s_plus, &problem.params, dt, &fwd_times, Some(&guard))?;
    Ok((pre, post))
}

/// Pixels predicted for `pre_obs ++ post_obs` by the flight through the anchor.
pub fn predict_observations(
    problem: &ReconProblem,
    v_minus: &Vector3<f64>,
    w_minus: &Vector3<f64>,
) -> Result<Vec<Vector2<f64>>, ReconError> {
    predict_with_dt(problem, v_minus, w_minus, DEFAULT_DT)
}

fn predict_with_dt(
    problem: &ReconProblem,
    v_minus: &Vector3<f64>,
    w_minus: &Vector3<f64>,
    dt: f64,
) -> Result<Vec<Vector2<f64>>, ReconError> {
    let (pre, post) = simulate(problem, v_minus, w_minus, dt)?;
    pre.iter().chain(&post).map(|s| problem.camera.project(&s.p).map_err(ReconError::from)).collect()
}

/// Stacked pixel residuals `prediction - observation` for the state `[v, w]`.
pub fn residuals(problem: &ReconProblem, x: &DVector<f64>) -> Result<DVector<f64>, ReconError> {
    let v = Vector3::new(x[0], x[1], x[2]);
    let w = Vector3::new(x[3], x[4], x[5]);
    let pred = predict_observations(problem, &v, &w)?;
    let mut r = DVector::zeros(2 * pred.len());
    for (k, (p, d)) in pred.iter().zip(problem.observations()).enumerate() {
        r[2 * k] = p.x - d.u;
        r[2 * k + 1] = p.y - d.v;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy)]
pub struct ReconConfig {
    pub lm: LmConfig,
    /// Finite-difference step for the velocity components, m/s.
    pub velocity_step: f64,
    /// Finite-difference step for the spin components, rad/s.
    pub spin_step: f64,
    /// Sampling step of the returned trajectory, s.
    pub dt: f64,
    /// Remaining starts are skipped once a converged fit reaches this rmse,
    /// px; 0 tries them all.
    pub retry_rmse: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig { max_iters: 200, initial_lambda: 1e-2, cost_rtol: 1e-10, step_rtol: 1e-10, cost_atol: 1e-20 },
            velocity_step: 1e-4,
            spin_step: 1e-2,
            dt: DEFAULT_DT,
            retry_rmse: 0.0,
        }
    }
}

impl ReconConfig {
    pub fn fd_steps(&self) -> [f64; 6] {
        let (a, b) = (self.velocity_step, self.spin_step);
        [a, a, a, b, b, b]
    }
}

/// Forward-difference Jacobian of the residuals at `x`.
pub fn residual_jacobian(
    problem: &ReconProblem,
    x: &DVector<f64>,
    cfg: &ReconConfig,
) -> Result<nalgebra::DMatrix<f64>, ReconError> {
    let r0 = residuals(problem, x)?;
    let mut f = |y: &DVector<f64>| residuals(problem, y).ok();
    forward_difference_jacobian(&mut f, x, &r0, &cfg.fd_steps())
        .ok_or_else(|| ReconError::InvalidProblem("Jacobian step left the feasible region".into()))
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub t_star: f64,
    pub x_bounce: Vector3<f64>,
    pub v_minus: Vector3<f64>,
    pub w_minus: Vector3<f64>,
    pub v_plus: Vector3<f64>,
    pub w_plus: Vector3<f64>,
    pub regime: BounceRegime,
    /// From the first to the last observation; the bounce appears twice,
    /// once with the incoming and once with the outgoing state.
    pub trajectory: Vec<BallState>,
    /// Times of the pre- and post-bounce observations, in order.
    pub observation_times: Vec<f64>,
    /// Fitted positions at `observation_times`.
    pub fitted_positions: Vec<Vector3<f64>>,
    pub reproj_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after every accepted step of the returned start.
    pub cost_history: Vec<f64>,
    pub warnings: Vec<ReconWarning>,
}

impl ReconResult {
    /// Converged, reprojects well and stays in a physically plausible volume
    /// around the table.
    pub fn is_success(&self, max_rmse: f64) -> bool {
        self.converged
            && self.reproj_rmse < max_rmse
            && self.v_minus.norm() < MAX_SPEED
            && self
                .trajectory
                .iter()
                .all(|s| s.p.x.abs() <= 3.0 && s.p.y.abs() <= 5.0 && (0.0..=4.0).contains(&s.p.z))
    }
}

/// Ball speeds above this are treated as implausible, m/s.
pub const MAX_SPEED: f64 = 40.0;
/// Reprojection rmse bound used for success accounting, px.
pub const SUCCESS_RMSE: f64 = 10.0;

fn starts(problem: &ReconProblem) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let v0 = problem.init_v;
    let w0 = problem.init_w;
    let flipped = Vector3::new(v0.x, -v0.y, v0.z);
    let spins = [
        Vector3::new(30.0, 0.0, 0.0),
        Vector3::new(-30.0, 0.0, 0.0),
        Vector3::new(100.0, 0.0, 0.0),
        Vector3::new(-100.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 40.0),
        Vector3::new(0.0, 0.0, -40.0),
        Vector3::new(0.0, 40.0, 0.0),
        Vector3::new(0.0, -40.0, 0.0),
    ];
    let mut out = vec![(v0, w0), (flipped, w0)];
    for w in spins {
        out.push((v0, w));
        out.push((flipped, w));
    }
    out
}

/// Fits `[v_minus, w_minus]` by Levenberg-Marquardt, falling back to further
/// starts when the first one fails to converge or fits poorly.
pub fn reconstruct(problem: &ReconProblem) -> Result<ReconResult, ReconError> {
    reconstruct_with(problem, &ReconConfig::default())
}

pub fn reconstruct_with(problem: &ReconProblem, cfg: &ReconConfig) -> Result<ReconResult, ReconError> {
    problem.validate()?;
    let n = problem.len();
    let mut best: Option<(f64, ReconResult)> = None;
    let mut last_err = None;
    for (v0, w0) in starts(problem) {
        let x0 = DVector::from_iterator(6, v0.iter().chain(w0.iter()).copied());
        let rep = levenberg_marquardt(
            x0,
            |x: &DVector<f64>| residuals(problem, x).ok(),
            |f, x, r| forward_difference_jacobian(f, x, r, &cfg.fd_steps()),
            &cfg.lm,
        );
        if !rep.cost.is_finite() {
            continue;
        }
        let v = Vector3::new(rep.params[0], rep.params[1], rep.params[2]);
        let w = Vector3::new(rep.params[3], rep.params[4], rep.params[5]);
        let rmse = (rep.cost / n as f64).sqrt();
        match finish(problem, cfg, v, w, rmse, rep.converged(), rep.iterations, rep.cost_history) {
            Ok(res) => {
                let better = best.as_ref().is_none_or(|(c, b)| {
                    (res.converged && !b.converged) || (res.converged == b.converged && rep.cost < *c)
                });
                if better {
                    best = Some((rep.cost, res));
                }
            }
            Err(e) => last_err = Some(e),
        }
        if let Some((_, b)) = &best {
            if b.converged && b.reproj_rmse <= cfg.retry_rmse {
                break;
            }
        }
    }
    match best {
        Some((_, res)) if res.converged => Ok(res),
        Some((_, res)) => Err(ReconError::NoConvergence { best: Box::new(res) }),
        None => Err(last_err.unwrap_or_else(|| ReconError::InvalidProblem("no feasible starting point".into()))),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &ReconProblem,
    cfg: &ReconConfig,
    v_minus: Vector3<f64>,
    w_minus: Vector3<f64>,
    reproj_rmse: f64,
    converged: bool,
    iterations: usize,
    cost_history: Vec<f64>,
) -> Result<ReconResult, ReconError> {
    let b = apply_bounce(&v_minus, &w_minus, &problem.params)?;
    let t_star = problem.anchor.t_star;
    let x = problem.anchor.x_bounce;
    let s_minus = BallState::new(x, v_minus, w_minus, t_star);
    let s_plus = BallState::new(x, b.v_plus, b.w_plus, t_star);
    let mut trajectory = match problem.pre_obs.first() {
        Some(d) => {
            let mut back = integrate_flight(&s_minus, &problem.params, cfg.dt, t_star - d.t, Direction::Backward, None)?;
            back.reverse();
            back
        }
        None => vec![s_minus],
    };
    match problem.post_obs.last() {
        Some(d) => trajectory.extend(integrate_flight(&s_plus, &problem.params, cfg.dt, d.t - t_star, Direction::Forward, None)?),
        None => trajectory.push(s_plus),
    }
    let (pre, post) = simulate(problem, &v_minus, &w_minus, DEFAULT_DT)?;
    let mut warnings = Vec::new();
    if problem.post_obs.len() < MIN_POST_OBSERVATIONS {
        warnings.push(ReconWarning::Identifiability { post_obs: problem.post_obs.len() });
    }
    Ok(ReconResult {
        t_star,
        x_bounce: x,
        v_minus,
        w_minus,
        v_plus: b.v_plus,
        w_plus: b.w_plus,
        regime: b.regime,
        trajectory,
        observation_times: problem.observations().map(|d| d.t).collect(),
        fitted_positions: pre.iter().chain(&post).map(|s| s.p).collect(),
        reproj_rmse,
        converged,
        iterations,
        cost_history,
        warnings,
    })
}

/// Reconstruction of one bounce within a rally.
#[derive(Debug, Clone)]
pub struct BounceReconstruction {
    pub event: Event,
    pub result: Result<ReconResult, ReconError>,
}

/// Camera closest in time to `t` from a time-sorted stream.
pub fn nearest_camera(stream: &[(f64, CalibratedCamera)], t: f64) -> Option<&CalibratedCamera> {
    let i = stream.partition_point(|(ts, _)| *ts < t);
    let cand = [i.checked_sub(1), (i < stream.len()).then_some(i)];
    cand.into_iter().flatten().min_by(|&a, &b| (stream[a].0 - t).abs().total_cmp(&(stream[b].0 - t).abs())).map(|k| &stream[k].1)
}

/// Problem for a bounce event: detections of the two adjacent segments, split
/// at the bounce time. Segment boundaries already stop at neighbouring events,
/// so racket strikes clip the windows.
pub fn build_problem(
    track: &RallyTrack,
    segments: &[Segment],
    event: &Event,
    camera: &CalibratedCamera,
    params: &PhysParams,
    table: &TableModel,
) -> Result<ReconProblem, ReconError> {
    let anchor = bounce_anchor(camera, event, table, params.r)?;
    let dets = track.detections();
    let (l, r) = (&segments[event.left_segment], &segments[event.right_segment]);
    let window = &dets[l.start_idx..=r.end_idx];
    let pre = window.iter().filter(|d| d.t < event.t_star).copied().collect();
    let post = window.iter().filter(|d| d.t > event.t_star).copied().collect();
    ReconProblem::new(*camera, anchor, pre, post, *params, *table)
}

/// Reconstructs every table bounce of a rally, in event-time order. Failures
/// are reported per bounce.
pub fn reconstruct_rally(
    track: &RallyTrack,
    segments: &[Segment],
    events: &[Event],
    cameras: &[(f64, CalibratedCamera)],
    params: &PhysParams,
    table: &TableModel,
    cfg: &ReconConfig,
) -> Vec<BounceReconstruction> {
    let mut bounces: Vec<&Event> = events.iter().filter(|e| e.kind == EventKind::TableBounce).collect();
    bounces.sort_by(|a, b| a.t_star.total_cmp(&b.t_star));
    bounces
        .par_iter()
        .map(|ev| {
            let result = match nearest_camera(cameras, ev.t_star) {
                None => Err(ReconError::InvalidProblem("no camera for the bounce time".into())),
                Some(cam) => build_problem(track, segments, ev, cam, params, table)
                    .and_then(|p| reconstruct_with(&p, cfg)),
            };
            BounceReconstruction { event: **ev, result }
        })
        .collect()
}
