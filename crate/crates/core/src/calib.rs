//! Camera calibration from table keypoints.
//!
//! The focal length is found by alternating a fixed-focal PnP solve with a
//! line search over `f`; with only the coplanar table features available,
//! `f` and the camera depth are strongly coupled, while rotation and the
//! in-plane translation are well determined.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, SVector, SymmetricEigen, Vector2, Vector3};
use thiserror::Error;
use serde::{Deserialize, Serialize};

use crate::camgeom::{CalibratedCamera, Intrinsics, Pose, TableFeature, TableModel};
use crate::lsq::{forward_difference_jacobian, golden_section, levenberg_marquardt, LmConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("calibration did not converge")]
    NoConvergence,
    #[error("implausible pose: camera {distance:.2} m from the table, {height:.2} m above its plane")]
    ImplausiblePose { distance: f64, height: f64 },
    #[error("no corner ordering gives a plausible calibration")]
    NoPlausibleOrdering,
    #[error("camera stream is empty")]
    EmptyStream,
    #[error("timestamps must be strictly increasing ({prev} then {next})")]
    NonMonotonicTimestamps { prev: f64, next: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    pub image: Vector2<f64>,
    pub label: TableFeature,
}

impl Correspondence {
    pub fn new(table: &TableModel, label: TableFeature, image: Vector2<f64>) -> Self {
        Self { world: table.feature(label), image, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub f0: f64,
    /// Convergence threshold on the change of the summed reprojection error, px.
    pub epsilon: f64,
    pub max_iters: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub width: u32,
    pub height: u32,
    /// Camera centers farther than this from the table center are rejected.
    pub max_camera_distance: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            f0: 1500.0,
            epsilon: 1e-3,
            max_iters: 50,
            f_min: 500.0,
            f_max: 5000.0,
            width: 1280,
            height: 720,
            max_camera_distance: 10.0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.f_min < self.f0 && self.f0 < self.f_max) {
            return Err(CalibError::InvalidConfig("need f_min < f0 < f_max".into()));
        }
        if self.max_iters == 0 || !(self.epsilon > 0.0) {
            return Err(CalibError::InvalidConfig("need max_iters >= 1 and epsilon > 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CalibError::InvalidConfig("image size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PnpSolution {
    pub pose: Pose,
    pub rmse: f64,
    pub iterations: usize,
}

fn reprojection_residuals(corrs: &[Correspondence], intr: &Intrinsics, pose: &Pose) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * corrs.len());
    for (i, c) in corrs.iter().enumerate() {
        let xc = pose.to_camera(&c.world);
        if xc.z <= 1e-9 {
            return None;
        }
        r[2 * i] = intr.cx() + intr.f * xc.x / xc.z - c.image.x;
        r[2 * i + 1] = intr.cy() + intr.f * xc.y / xc.z - c.image.y;
    }
    Some(r)
}

/// Summed (not squared) reprojection error in pixels.
pub fn total_reprojection_error(corrs: &[Correspondence], cam: &CalibratedCamera) -> f64 {
    corrs
        .iter()
        .map(|c| match cam.project(&c.world) {
            Ok(p) => (p - c.image).norm(),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

pub fn reprojection_rmse(corrs: &[Correspondence], cam: &CalibratedCamera) -> f64 {
    let sq: f64 = corrs
        .iter()
        .map(|c| match cam.project(&c.world) {
            Ok(p) => (p - c.image).norm_squared(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    (sq / corrs.len() as f64).sqrt()
}

fn check_image_spread(corrs: &[Correspondence]) -> Result<(), CalibError> {
    let n = corrs.len() as f64;
    let mean = corrs.iter().map(|c| c.image).sum::<Vector2<f64>>() / n;
    let mut cov = nalgebra::Matrix2::zeros();
    for c in corrs {
        let d = c.image - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo / hi < 1e-10 {
        return Err(CalibError::DegenerateConfiguration("image points are collinear".into()));
    }
    Ok(())
}

/// Orthonormal plane basis `(centroid, e1, e2, e3)` and the planarity ratio.
fn plane_frame(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1: Vector3<f64> = eig.eigenvectors.column(idx[0]).into();
    let e2: Vector3<f64> = eig.eigenvectors.column(idx[1]).into();
    let e3 = e1.cross(&e2);
    let ratio = eig.eigenvalues[idx[2]].max(0.0) / eig.eigenvalues[idx[0]].max(f64::MIN_POSITIVE);
    (c, Matrix3::from_columns(&[e1, e2, e3]), ratio)
}

fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let imin = eig.eigenvalues.imin();
    eig.eigenvectors.column(imin).into()
}

/// Hartley normalization transform for 2D points.
fn normalizer(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Matrix3<f64> {
    let ns = normalizer(src);
    let nd = normalizer(dst);
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ns * Vector3::new(s.x, s.y, 1.0);
        let d = nd * Vector3::new(d.x, d.y, 1.0);
        let (x, y, u, v) = (s.x / s.z, s.y / s.z, d.x / d.z, d.y / d.z);
        a.row_mut(2 * i).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = null_vector(&a);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    nd.try_inverse().unwrap_or_else(Matrix3::identity) * hn * ns
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

fn normalized_image(corrs: &[Correspondence], intr: &Intrinsics) -> Vec<Vector2<f64>> {
    let kinv = intr.k_inv();
    corrs
        .iter()
        .map(|c| {
            let m = kinv * Vector3::new(c.image.x, c.image.y, 1.0);
            Vector2::new(m.x, m.y)
        })
        .collect()
}

fn planar_init(corrs: &[Correspondence], intr: &Intrinsics) -> Pose {
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
    let (c, e, _) = plane_frame(&world);
    let q: Vec<Vector2<f64>> = world
        .iter()
        .map(|p| Vector2::new((p - c).dot(&e.column(0)), (p - c).dot(&e.column(1))))
        .collect();
    let m = normalized_image(corrs, intr);
    let h = homography(&q, &m);
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut s = 2.0 / (h1.norm() + h2.norm());
    if h3.z * s < 0.0 {
        s = -s;
    }
    let (r1, r2, tp) = (h1 * s, h2 * s, h3 * s);
    let rp = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let r = rp * e.transpose();
    Pose { r, t: tp - r * c }
}

fn dlt_init(corrs: &[Correspondence], intr: &Intrinsics) -> Pose {
    let m = normalized_image(corrs, intr);
    let mut a = DMatrix::zeros(2 * corrs.len(), 12);
    for (i, (c, p)) in corrs.iter().zip(&m).enumerate() {
        let x = [c.world.x, c.world.y, c.world.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -p.x * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -p.y * x[k];
        }
    }
    let v = null_vector(&a);
    let mut pm = nalgebra::Matrix3x4::from_row_slice(v.as_slice());
    let det = pm.fixed_view::<3, 3>(0, 0).determinant();
    let scale = det.signum() / det.abs().cbrt();
    pm *= scale;
    let r = nearest_rotation(&pm.fixed_view::<3, 3>(0, 0).into_owned());
    Pose { r, t: pm.column(3).into_owned() }
}

/// Pose minimizing squared reprojection error at a fixed focal length.
pub fn solve_pnp_fixed_f(
    corrs: &[Correspondence],
    intr: &Intrinsics,
    init: Option<&Pose>,
) -> Result<PnpSolution, CalibError> {
    if corrs.len() < 4 {
        return Err(CalibError::DegenerateConfiguration(format!("need >= 4 points, got {}", corrs.len())));
    }
    check_image_spread(corrs)?;
    let start = match init {
        Some(p) => *p,
        None => {
            let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
            let (_, _, planarity) = plane_frame(&world);
            if planarity < 1e-9 {
                planar_init(corrs, intr)
            } else if corrs.len() >= 6 {
                dlt_init(corrs, intr)
            } else {
                return Err(CalibError::DegenerateConfiguration(
                    "non-coplanar sets need >= 6 points without an initial pose".into(),
                ));
            }
        }
    };
    if !start.r.iter().chain(start.t.iter()).all(|x| x.is_finite()) {
        return Err(CalibError::DegenerateConfiguration("pose initialization failed".into()));
    }
    let r0 = start.r;
    let pose_of = |x: &DVector<f64>| Pose {
        r: Rotation3::new(Vector3::new(x[0], x[1], x[2])).matrix() * r0,
        t: Vector3::new(x[3], x[4], x[5]),
    };
    let residual = |x: &DVector<f64>| reprojection_residuals(corrs, intr, &pose_of(x));
    let scale = 1.0 + start.t.norm();
    let steps = [1e-8, 1e-8, 1e-8, 1e-8 * scale, 1e-8 * scale, 1e-8 * scale];
    let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0, start.t.x, start.t.y, start.t.z]);
    let cfg = LmConfig { max_iters: 100, cost_atol: 1e-20, ..LmConfig::default() };
    let rep = levenberg_marquardt(x0, residual, |f, x, r| forward_difference_jacobian(f, x, r, &steps), &cfg);
    if !rep.cost.is_finite() {
        return Err(CalibError::NoConvergence);
    }
    if rep.termination == crate::lsq::Termination::MaxIterations && rep.accepted_steps == 0 {
        return Err(CalibError::NoConvergence);
    }
    let pose = pose_of(&rep.params);
    let rmse = (rep.cost / corrs.len() as f64).sqrt();
    Ok(PnpSolution { pose, rmse, iterations: rep.iterations })
}

/// Result of the focal-length search.
#[derive(Debug, Clone)]
pub struct FocalEstimate {
    pub camera: CalibratedCamera,
    /// Summed reprojection error after each outer iteration (first entry: at `f0`).
    pub error_history: Vec<f64>,
    pub iterations: usize,
}

fn profile_error(corrs: &[Correspondence], f: f64, cfg: &CalibConfig) -> Option<(CalibratedCamera, f64)> {
    let intr = Intrinsics::new(f, cfg.width, cfg.height).ok()?;
    let sol = solve_pnp_fixed_f(corrs, &intr, None).ok()?;
    let mut cam = CalibratedCamera::new(intr, sol.pose);
    cam.reprojection_rmse = sol.rmse;
    let e = total_reprojection_error(corrs, &cam);
    e.is_finite().then_some((cam, e))
}

/// Checks the camera-center distance and height gates.
pub fn check_plausible(cam: &CalibratedCamera, table: &TableModel, max_distance: f64) -> Result<(), CalibError> {
    let c = cam.center();
    let distance = (c - table.center()).norm();
    let height = c.z - table.height;
    if !(distance < max_distance) || !(height > 0.0) {
        return Err(CalibError::ImplausiblePose { distance, height });
    }
    Ok(())
}

/// Line search over `f`: a log-spaced scan of `[f_min, f_max]` followed by
/// golden-section refinement around the best sample.
fn line_search_f(corrs: &[Correspondence], cfg: &CalibConfig) -> Option<(f64, CalibratedCamera, f64)> {
    const SAMPLES: usize = 32;
    let (lo, hi) = (cfg.f_min.ln(), cfg.f_max.ln());
    let grid: Vec<f64> = (0..SAMPLES).map(|i| (lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64).exp()).collect();
    let errs: Vec<f64> =
        grid.iter().map(|&f| profile_error(corrs, f, cfg).map_or(f64::INFINITY, |(_, e)| e)).collect();
    let best = (0..SAMPLES).min_by(|&a, &b| errs[a].total_cmp(&errs[b]))?;
    if !errs[best].is_finite() {
        return None;
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SAMPLES - 1)];
    let (f, _) = golden_section(
        |f| profile_error(corrs, f, cfg).map_or(f64::INFINITY, |(_, e)| e),
        a,
        b,
        1e-7 * grid[best],
    );
    let (cam, e) = profile_error(corrs, f, cfg)?;
    if e <= errs[best] {
        Some((f, cam, e))
    } else {
        let (cam, e) = profile_error(corrs, grid[best], cfg)?;
        Some((grid[best], cam, e))
    }
}

/// Jointly estimates focal length and pose (no plausibility gate).
pub fn estimate_focal_unchecked(corrs: &[Correspondence], cfg: &CalibConfig) -> Result<FocalEstimate, CalibError> {
    cfg.validate()?;
    if corrs.len() < 4 {
        return Err(CalibError::DegenerateConfiguration(format!("need >= 4 points, got {}", corrs.len())));
    }
    check_image_spread(corrs)?;
    let (mut cam, mut err) = profile_error(corrs, cfg.f0, cfg).ok_or(CalibError::NoConvergence)?;
    let mut history = vec![err];
    let mut k = 0;
    loop {
        let prev = err;
        if let Some((_, c, e)) = line_search_f(corrs, cfg) {
            if e <= err {
                cam = c;
                err = e;
            }
        }
        history.push(err);
        k += 1;
        if (prev - err).abs() < cfg.epsilon || k >= cfg.max_iters {
            break;
        }
    }
    cam.reprojection_rmse = reprojection_rmse(corrs, &cam);
    Ok(FocalEstimate { camera: cam, error_history: history, iterations: k })
}

/// Jointly estimates focal length and pose and applies the plausibility gate.
pub fn estimate_focal(
    corrs: &[Correspondence],
    table: &TableModel,
    cfg: &CalibConfig,
) -> Result<FocalEstimate, CalibError> {
    let est = estimate_focal_unchecked(corrs, cfg)?;
    check_plausible(&est.camera, table, cfg.max_camera_distance)?;
    Ok(est)
}

/// Assignment of detector-ordered image corners to table corners:
/// image corner `i` is table corner `(shift + i)` (or `(shift - i)` when reversed), mod 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CornerOrdering {
    pub shift: usize,
    pub reversed: bool,
}

impl CornerOrdering {
    pub fn label(&self, i: usize) -> TableFeature {
        let idx = if self.reversed { (self.shift + 4 - i % 4) % 4 } else { (self.shift + i) % 4 };
        TableFeature::CORNERS[idx]
    }

    /// The same assignment after a half turn of the table, which is
    /// indistinguishable from the image alone.
    pub fn half_turn(&self) -> Self {
        Self { shift: (self.shift + 2) % 4, reversed: self.reversed }
    }

    pub fn equivalent(&self, other: &Self) -> bool {
        self == other || *self == other.half_turn()
    }
}

#[derive(Debug, Clone)]
pub struct Disambiguation {
    pub correspondences: Vec<Correspondence>,
    pub camera: CalibratedCamera,
    pub ordering: CornerOrdering,
    /// A non-equivalent ordering fits nearly as well.
    pub ambiguous: bool,
    pub error: f64,
}

/// Calibrates every cyclic corner ordering and keeps the plausible one with the
/// smallest reprojection error.
pub fn disambiguate_corners(
    corners: &[Vector2<f64>; 4],
    table: &TableModel,
    cfg: &CalibConfig,
) -> Result<Disambiguation, CalibError> {
    for i in 0..4 {
        for j in i + 1..4 {
            if (corners[i] - corners[j]).norm() < 1e-9 {
                return Err(CalibError::DegenerateConfiguration("corner points are not distinct".into()));
            }
        }
    }
    let mut candidates = Vec::new();
    for reversed in [false, true] {
        for shift in 0..4 {
            let ordering = CornerOrdering { shift, reversed };
            let corrs: Vec<Correspondence> =
                (0..4).map(|i| Correspondence::new(table, ordering.label(i), corners[i])).collect();
            if let Ok(est) = estimate_focal(&corrs, table, cfg) {
                let e = total_reprojection_error(&corrs, &est.camera);
                candidates.push((ordering, corrs, est.camera, e));
            }
        }
    }
    let best = (0..candidates.len())
        .min_by(|&a, &b| candidates[a].3.total_cmp(&candidates[b].3))
        .ok_or(CalibError::NoPlausibleOrdering)?;
    let (ordering, corrs, camera, error) = candidates[best].clone();
    let ambiguous = candidates
        .iter()
        .filter(|c| !c.0.equivalent(&ordering))
        .any(|c| c.3 <= 1.2 * error + 0.5);
    Ok(Disambiguation { correspondences: corrs, camera, ordering, ambiguous, error })
}

/// Noise settings for [`CameraTracker`], expressed per nominal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub frame_interval: f64,
    /// Relative focal-length drift per frame.
    pub f_process_rel: f64,
    pub rot_process: f64,
    /// Camera-center drift per frame, m.
    pub center_process: f64,
    pub f_measurement_rel: f64,
    pub rot_measurement: f64,
    pub center_measurement: f64,
    /// Mahalanobis gate on the innovation.
    pub gate: f64,
    /// Consecutive rejections after which the filter restarts from the measurement.
    pub max_rejections: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            frame_interval: 1.0 / 25.0,
            f_process_rel: 0.005,
            rot_process: 0.5f64.to_radians(),
            center_process: 0.02,
            f_measurement_rel: 0.05,
            rot_measurement: 3f64.to_radians(),
            center_measurement: 0.3,
            // sqrt of the 99.9% chi-square quantile with 7 dof
            gate: 24.32f64.sqrt(),
            max_rejections: 5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrackedCamera {
    pub t: f64,
    pub camera: CalibratedCamera,
    /// Whether this frame's measurement was fused (false: prediction carried forward).
    pub accepted: bool,
}

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = SVector<f64, 7>;

/// Constant-position Kalman filter over focal length, orientation and camera center.
#[derive(Debug, Clone)]
pub struct CameraTracker {
    cfg: TrackerConfig,
    state: Option<TrackerState>,
}

#[derive(Debug, Clone)]
struct TrackerState {
    t: f64,
    f: f64,
    rot: Rotation3<f64>,
    center: Vector3<f64>,
    cov: Mat7,
    intr: Intrinsics,
    rmse: f64,
    rejections: usize,
}

impl CameraTracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self { cfg, state: None }
    }

    pub fn covariance(&self) -> Option<Mat7> {
        self.state.as_ref().map(|s| s.cov)
    }

    fn measurement_cov(&self, f: f64) -> Mat7 {
        let c = &self.cfg;
        let (sf, sr, sc) = (c.f_measurement_rel * f, c.rot_measurement, c.center_measurement);
        Mat7::from_diagonal(&Vec7::from_column_slice(&[
            sf * sf,
            sr * sr,
            sr * sr,
            sr * sr,
            sc * sc,
            sc * sc,
            sc * sc,
        ]))
    }

    fn process_cov(&self, f: f64, frames: f64) -> Mat7 {
        let c = &self.cfg;
        let (sf, sr, sc) = (c.f_process_rel * f, c.rot_process, c.center_process);
        Mat7::from_diagonal(&Vec7::from_column_slice(&[
            sf * sf,
            sr * sr,
            sr * sr,
            sr * sr,
            sc * sc,
            sc * sc,
            sc * sc,
        ])) * frames
    }

    fn init(&mut self, t: f64, cam: &CalibratedCamera) -> TrackedCamera {
        let cov = self.measurement_cov(cam.intrinsics.f);
        self.state = Some(TrackerState {
            t,
            f: cam.intrinsics.f,
            rot: cam.pose.rotation(),
            center: cam.center(),
            cov,
            intr: cam.intrinsics,
            rmse: cam.reprojection_rmse,
            rejections: 0,
        });
        TrackedCamera { t, camera: *cam, accepted: true }
    }

    fn current(&self, t: f64, accepted: bool) -> TrackedCamera {
        let s = self.state.as_ref().expect("tracker initialized");
        let r = *s.rot.matrix();
        let intr = Intrinsics { f: s.f, ..s.intr };
        let mut camera = CalibratedCamera::new(intr, Pose { r, t: -r * s.center });
        camera.reprojection_rmse = s.rmse;
        TrackedCamera { t, camera, accepted }
    }

    /// Advances the filter to `t`, fusing `measurement` when given and inside the gate.
    pub fn update(&mut self, t: f64, measurement: Option<&CalibratedCamera>) -> Result<TrackedCamera, CalibError> {
        let Some(prev_t) = self.state.as_ref().map(|s| s.t) else {
            return match measurement {
                Some(m) => Ok(self.init(t, m)),
                None => Err(CalibError::EmptyStream),
            };
        };
        if !(t > prev_t) {
            return Err(CalibError::NonMonotonicTimestamps { prev: prev_t, next: t });
        }
        let frames = (t - prev_t) / self.cfg.frame_interval;
        let q = {
            let s = self.state.as_ref().unwrap();
            self.process_cov(s.f, frames)
        };
        {
            let s = self.state.as_mut().unwrap();
            s.cov += q;
            s.t = t;
        }
        let Some(m) = measurement else {
            return Ok(self.current(t, false));
        };
        let rn = self.measurement_cov(m.intrinsics.f);
        let s = self.state.as_mut().unwrap();
        let drot = (m.pose.rotation() * s.rot.inverse()).scaled_axis();
        let dc = m.center() - s.center;
        let y = Vec7::from_column_slice(&[m.intrinsics.f - s.f, drot.x, drot.y, drot.z, dc.x, dc.y, dc.z]);
        let innov_cov = s.cov + rn;
        let Some(sinv) = innov_cov.try_inverse() else {
            return Ok(self.current(t, false));
        };
        let mahal = (y.transpose() * sinv * y)[(0, 0)].sqrt();
        if mahal > self.cfg.gate {
            s.rejections += 1;
            if s.rejections > self.cfg.max_rejections {
                return Ok(self.init(t, m));
            }
            return Ok(self.current(t, false));
        }
        let gain = s.cov * sinv;
        let dx = gain * y;
        let ikh = Mat7::identity() - gain;
        let cov = ikh * s.cov * ikh.transpose() + gain * rn * gain.transpose();
        s.cov = (cov + cov.transpose()) * 0.5;
        s.f += dx[0];
        s.rot = Rotation3::new(Vector3::new(dx[1], dx[2], dx[3])) * s.rot;
        s.center += Vector3::new(dx[4], dx[5], dx[6]);
        s.intr = m.intrinsics;
        s.rmse = m.reprojection_rmse;
        s.rejections = 0;
        Ok(self.current(t, true))
    }
}

/// Filters a whole stream. Frames with `None` (failed calibrations) get the
/// carried-forward prediction once the filter is initialized and are dropped before.
pub fn track_camera(
    frames: &[(f64, Option<CalibratedCamera>)],
    cfg: &TrackerConfig,
) -> Result<Vec<TrackedCamera>, CalibError> {
    if frames.iter().all(|(_, c)| c.is_none()) {
        return Err(CalibError::EmptyStream);
    }
    let mut tracker = CameraTracker::new(*cfg);
    let mut out = Vec::with_capacity(frames.len());
    for (t, cam) in frames {
        match tracker.update(*t, cam.as_ref()) {
            Ok(tc) => out.push(tc),
            Err(CalibError::EmptyStream) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
