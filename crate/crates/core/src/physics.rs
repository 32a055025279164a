//! Ball flight (drag, Magnus, gravity) and table bounce.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camgeom::TableModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("trajectory crosses the table plane between t={t0} and t={t1}")]
    PlaneCrossing { t0: f64, t1: f64 },
    #[error("ball is not moving towards the surface (v_z = {vz})")]
    BallMovingAway { vz: f64 },
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
}

/// Air density used by the tennis aerodynamics, kg/m³ (20 °C, sea level).
pub const AIR_DENSITY: f64 = 1.204;

/// Default RK4 step (1/500 s).
pub const DEFAULT_DT: f64 = 1.0 / 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Grass,
    Clay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sport", rename_all = "snake_case")]
pub enum Variant {
    TableTennis,
    Tennis { surface: Surface, rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub m: f64,
    pub k_d: f64,
    pub k_m: f64,
    pub g: [f64; 3],
    pub r: f64,
    pub mu: f64,
    pub k_cor: f64,
    pub alpha_threshold: f64,
    pub variant: Variant,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self::table_tennis()
    }
}

impl PhysParams {
    pub fn table_tennis() -> Self {
        Self {
            m: 2.7e-3,
            k_d: 3.8e-4,
            k_m: 4.86e-6,
            g: [0.0, 0.0, -9.81],
            r: 0.02,
            mu: 0.3,
            k_cor: 0.85,
            alpha_threshold: 0.4,
            variant: Variant::TableTennis,
        }
    }

    pub fn tennis(surface: Surface) -> Self {
        let (mu, k_cor) = match surface {
            Surface::Grass => (0.55, 0.68),
            Surface::Clay => (0.9, 0.85),
        };
        Self {
            m: 5.7e-2,
            // unused by the tennis aerodynamics
            k_d: 0.0,
            k_m: 0.0,
            g: [0.0, 0.0, -9.81],
            r: 0.033,
            mu,
            k_cor,
            alpha_threshold: 0.4,
            variant: Variant::Tennis { surface, rho: AIR_DENSITY },
        }
    }

    /// Parses the `--physics` names: `tabletennis`, `tennis-grass`, `tennis-clay`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tabletennis" | "table-tennis" => Some(Self::table_tennis()),
            "tennis-grass" => Some(Self::tennis(Surface::Grass)),
            "tennis-clay" => Some(Self::tennis(Surface::Clay)),
            _ => None,
        }
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.g)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.m > 0.0 && self.r > 0.0) {
            return Err(PhysicsError::InvalidParams("mass and radius must be positive".into()));
        }
        if !(self.k_cor > 0.0 && self.k_cor <= 1.0) {
            return Err(PhysicsError::InvalidParams("k_cor must be in (0, 1]".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(PhysicsError::InvalidParams("mu must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
    pub t: f64,
}

impl BallState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, w: Vector3<f64>, t: f64) -> Self {
        Self { p, v, w, t }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.w.iter()).all(|x| x.is_finite()) && self.t.is_finite()
    }
}

/// Tennis drag and Magnus coefficients `(C_D, C_M)`.
pub fn tennis_coefficients(v: &Vector3<f64>, w: &Vector3<f64>) -> (f64, f64) {
    let speed = v.norm();
    let spin = w.norm();
    let dv = speed - 50.0;
    let c_d = 0.6204 - 9.76e-4 * dv + (1.027e-4 - 2.24e-6 * dv) * spin;
    let c_m = spin * (4.68e-4 - 2.10e-5 * dv);
    (c_d, c_m)
}

/// Aerodynamic + gravitational acceleration.
pub fn acceleration(v: &Vector3<f64>, w: &Vector3<f64>, params: &PhysParams) -> Vector3<f64> {
    let speed = v.norm();
    let force = match params.variant {
        Variant::TableTennis => -params.k_d * speed * v + params.k_m * w.cross(v),
        Variant::Tennis { rho, .. } => {
            let (c_d, c_m) = tennis_coefficients(v, w);
            let q = 0.5 * rho * std::f64::consts::PI * params.r * params.r * speed;
            let drag = -c_d * q * v;
            let spin = w.norm();
            let magnus = if spin < 1e-9 { Vector3::zeros() } else { c_m * q * w.cross(v) / spin };
            drag + magnus
        }
    };
    force / params.m + params.gravity()
}

/// Time derivative of position and velocity. Spin is constant in flight.
pub fn flight_derivative(s: &BallState, params: &PhysParams) -> (Vector3<f64>, Vector3<f64>) {
    (s.v, acceleration(&s.v, &s.w, params))
}

/// One classical RK4 step of size `h` (may be negative).
pub fn rk4_step(s: &BallState, h: f64, params: &PhysParams) -> BallState {
    let a = |v: &Vector3<f64>| acceleration(v, &s.w, params);
    let (p1, v1) = (s.v, a(&s.v));
    let v_2 = s.v + v1 * (h / 2.0);
    let (p2, v2) = (v_2, a(&v_2));
    let v_3 = s.v + v2 * (h / 2.0);
    let (p3, v3) = (v_3, a(&v_3));
    let v_4 = s.v + v3 * h;
    let (p4, v4) = (v_4, a(&v_4));
    BallState {
        p: s.p + (p1 + 2.0 * p2 + 2.0 * p3 + p4) * (h / 6.0),
        v: s.v + (v1 + 2.0 * v2 + 2.0 * v3 + v4) * (h / 6.0),
        w: s.w,
        t: s.t + h,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Where flight integration must stop: the radius-offset plane above the table top.
#[derive(Debug, Clone, Copy)]
pub struct CrossingGuard {
    pub table: TableModel,
    pub radius: f64,
    /// Crossings outside the table footprint grown by this margin are ignored.
    pub margin: f64,
}

impl CrossingGuard {
    pub fn new(table: TableModel, radius: f64) -> Self {
        Self { table, radius, margin: 0.0 }
    }

    fn height(&self, p: &Vector3<f64>) -> f64 {
        p.z - self.table.height - self.radius
    }

    fn check(&self, a: &BallState, b: &BallState) -> Result<(), PhysicsError> {
        let (ha, hb) = (self.height(&a.p), self.height(&b.p));
        // touching the plane at an endpoint is allowed; only strict sign changes count
        if ha * hb < 0.0 {
            let s = ha / (ha - hb);
            let x = a.p + (b.p - a.p) * s;
            if self.table.contains_xy(&x, self.margin) {
                let (t0, t1) = if a.t < b.t { (a.t, b.t) } else { (b.t, a.t) };
                return Err(PhysicsError::PlaneCrossing { t0, t1 });
            }
        }
        Ok(())
    }
}

/// Integrates with fixed step `dt` for `duration` seconds, returning every
/// state including both endpoints. The final step is shortened to land on
/// the endpoint exactly.
pub fn integrate_flight(
    s0: &BallState,
    params: &PhysParams,
    dt: f64,
    duration: f64,
    direction: Direction,
    guard: Option<&CrossingGuard>,
) -> Result<Vec<BallState>, PhysicsError> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(PhysicsError::InvalidRequest("dt and duration must be positive".into()));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let n = (duration / dt).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(*s0);
    let mut s = *s0;
    let mut elapsed = 0.0;
    for k in 0..n {
        let h = if k + 1 == n { duration - elapsed } else { dt };
        if h <= 0.0 {
            break;
        }
        let next = rk4_step(&s, sign * h, params);
        if let Some(g) = guard {
            g.check(&s, &next)?;
        }
        elapsed += h;
        s = next;
        out.push(s);
    }
    if let Some(last) = out.last_mut() {
        last.t = s0.t + sign * duration;
    }
    Ok(out)
}

/// Integrates from `s0` to each target time (all on the same side of `s0.t`,
/// sorted by distance from it) and returns the state at every target.
pub fn integrate_to_times(
    s0: &BallState,
    params: &PhysParams,
    dt: f64,
    targets: &[f64],
    guard: Option<&CrossingGuard>,
) -> Result<Vec<BallState>, PhysicsError> {
    let mut out = Vec::with_capacity(targets.len());
    let mut s = *s0;
    for &target in targets {
        let span = target - s.t;
        if span.abs() > 0.0 {
            let sign = span.signum();
            if (target - s0.t) * sign < 0.0 {
                return Err(PhysicsError::InvalidRequest("targets must be monotone away from the start".into()));
            }
            let steps = (span.abs() / dt).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                let next = rk4_step(&s, h, params);
                if let Some(g) = guard {
                    g.check(&s, &next)?;
                }
                s = next;
            }
            s.t = target;
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BounceRegime {
    Rolling,
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BounceOutcome {
    pub v_plus: Vector3<f64>,
    pub w_plus: Vector3<f64>,
    pub regime: BounceRegime,
    pub alpha: f64,
}

/// Slip coefficient deciding the bounce regime. Returns `+inf` when there is
/// no tangential slip at the contact point.
pub fn bounce_alpha(v: &Vector3<f64>, w: &Vector3<f64>, params: &PhysParams) -> Result<f64, PhysicsError> {
    if v.z >= 0.0 {
        return Err(PhysicsError::BallMovingAway { vz: v.z });
    }
    let r = params.r;
    let slip = ((v.x - w.y * r).powi(2) + (v.y + w.x * r).powi(2)).sqrt();
    if slip < 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(params.mu * (1.0 + params.k_cor) * v.z.abs() / slip)
}

/// Bounce matrices `(A, B, C, D)` for a given regime parameter. Rolling uses
/// `a = 0.4`, which is where the sliding family meets it.
pub fn bounce_matrices(a: f64, params: &PhysParams) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let r = params.r;
    let ma = Matrix3::new(1.0 - a, 0.0, 0.0, 0.0, 1.0 - a, 0.0, 0.0, 0.0, -params.k_cor);
    let mb = Matrix3::new(0.0, a * r, 0.0, -a * r, 0.0, 0.0, 0.0, 0.0, 0.0);
    let c = 3.0 * a / (2.0 * r);
    let mc = Matrix3::new(0.0, -c, 0.0, c, 0.0, 0.0, 0.0, 0.0, 0.0);
    let d = 1.0 - 1.5 * a;
    let md = Matrix3::new(d, 0.0, 0.0, 0.0, d, 0.0, 0.0, 0.0, 1.0);
    (ma, mb, mc, md)
}

fn rolling_matrices(params: &PhysParams) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let r = params.r;
    (
        Matrix3::new(0.6, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, -params.k_cor),
        Matrix3::new(0.0, 0.4 * r, 0.0, -0.4 * r, 0.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, -0.6 / r, 0.0, 0.6 / r, 0.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.4, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 1.0),
    )
}

pub fn apply_bounce(v: &Vector3<f64>, w: &Vector3<f64>, params: &PhysParams) -> Result<BounceOutcome, PhysicsError> {
    let alpha = bounce_alpha(v, w, params)?;
    let (regime, (a, b, c, d)) = if alpha >= params.alpha_threshold {
        (BounceRegime::Rolling, rolling_matrices(params))
    } else {
        (BounceRegime::Sliding, bounce_matrices(alpha, params))
    };
    Ok(BounceOutcome { v_plus: a * v + b * w, w_plus: c * v + d * w, regime, alpha })
}

/// Mechanical energy per unit mass, measured from `z = 0`.
pub fn specific_energy(s: &BallState, params: &PhysParams) -> f64 {
    0.5 * s.v.norm_squared() - params.gravity().dot(&s.p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tt() -> PhysParams {
        PhysParams::table_tennis()
    }

    fn no_aero() -> PhysParams {
        PhysParams { k_d: 0.0, k_m: 0.0, ..tt() }
    }

    #[test]
    fn free_fall_derivative() {
        let s = BallState::new(Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), 0.0);
        let (dp, dv) = flight_derivative(&s, &tt());
        assert_eq!(dp, Vector3::zeros());
        assert_abs_diff_eq!(dv, Vector3::new(0.0, 0.0, -9.81), epsilon = 1e-15);
    }

    #[test]
    fn drag_derivative_matches_hand_evaluation() {
        // -k_D * |v| * v_x / m = -3.8e-4 * 10 * 10 / 2.7e-3
        let s = BallState::new(Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let (_, dv) = flight_derivative(&s, &tt());
        assert_abs_diff_eq!(dv.x, -14.074074074074074, epsilon = 1e-12);
        assert_abs_diff_eq!(dv.y, 0.0);
        assert_abs_diff_eq!(dv.z, -9.81, epsilon = 1e-15);
    }

    #[test]
    fn magnus_is_perpendicular() {
        let p = tt();
        let v = Vector3::new(10.0, 0.0, 0.0);
        let w = Vector3::new(0.0, 0.0, 100.0);
        let with = acceleration(&v, &w, &p);
        let without = acceleration(&v, &Vector3::zeros(), &p);
        let magnus = with - without;
        // k_M * 100 * 10 / m along +y
        assert_abs_diff_eq!(magnus, Vector3::new(0.0, 4.86e-6 * 1000.0 / 2.7e-3, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(magnus.dot(&v), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(magnus.dot(&w), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn drag_free_arc_is_ballistic() {
        let s0 = BallState::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let traj = integrate_flight(&s0, &no_aero(), DEFAULT_DT, 0.2, Direction::Forward, None).unwrap();
        let end = traj.last().unwrap();
        assert_abs_diff_eq!(end.t, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(end.p, Vector3::new(0.2, 0.0, 1.0 - 4.905 * 0.04), epsilon = 1e-9);
        assert_eq!(traj.len(), 101);
    }

    #[test]
    fn approaches_terminal_velocity() {
        let p = tt();
        let terminal = (p.m * 9.81 / p.k_d).sqrt();
        assert_abs_diff_eq!(terminal, 8.3489, epsilon = 1e-3);
        let s0 = BallState::new(Vector3::new(0.0, 0.0, 100.0), Vector3::zeros(), Vector3::zeros(), 0.0);
        let traj = integrate_flight(&s0, &p, DEFAULT_DT, 3.0, Direction::Forward, None).unwrap();
        let mut prev = 0.0;
        for s in &traj {
            let speed = s.v.norm();
            assert!(speed >= prev - 1e-12 && speed < terminal);
            prev = speed;
        }
        assert!((prev - terminal).abs() / terminal < 0.01);
    }

    #[test]
    fn forward_backward_round_trip() {
        let s0 = BallState::new(
            Vector3::new(0.1, -1.5, 1.0),
            Vector3::new(0.5, 7.0, 1.5),
            Vector3::new(-80.0, 10.0, 20.0),
            0.0,
        );
        let fwd = integrate_flight(&s0, &tt(), DEFAULT_DT, 0.3, Direction::Forward, None).unwrap();
        let end = *fwd.last().unwrap();
        let back = integrate_flight(&end, &tt(), DEFAULT_DT, 0.3, Direction::Backward, None).unwrap();
        let s = back.last().unwrap();
        assert!((s.p - s0.p).norm() < 1e-7);
        assert!((s.v - s0.v).norm() < 1e-6);
        assert_abs_diff_eq!(s.t, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = tt();
        let s0 = BallState::new(
            Vector3::new(0.0, -1.6, 1.0),
            Vector3::new(0.3, 8.0, 1.0),
            Vector3::new(-120.0, 0.0, 0.0),
            0.0,
        );
        let end = |dt: f64| *integrate_flight(&s0, &p, dt, 0.5, Direction::Forward, None).unwrap().last().unwrap();
        let reference = end(1e-4);
        let e1 = (end(0.02).p - reference.p).norm();
        let e2 = (end(0.01).p - reference.p).norm();
        assert!(e1 / e2 >= 15.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn crossing_guard_reports_bracket() {
        let table = TableModel::ittf();
        let guard = CrossingGuard::new(table, 0.02);
        let s0 = BallState::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 0.0), Vector3::zeros(), 0.0);
        let err = integrate_flight(&s0, &tt(), DEFAULT_DT, 1.0, Direction::Forward, Some(&guard)).unwrap_err();
        match err {
            PhysicsError::PlaneCrossing { t0, t1 } => {
                assert!(t1 - t0 <= DEFAULT_DT + 1e-12);
                assert!(t0 > 0.15 && t1 < 0.25);
            }
            e => panic!("unexpected {e:?}"),
        }
        // same drop beside the table is fine
        let s0 = BallState { p: Vector3::new(2.0, 0.0, 1.0), ..s0 };
        assert!(integrate_flight(&s0, &tt(), DEFAULT_DT, 1.0, Direction::Forward, Some(&guard)).is_ok());
    }

    #[test]
    fn energy_never_increases() {
        let p = tt();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s0 = BallState::new(
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-12.0..12.0), rng.gen_range(-2.0..4.0)),
                Vector3::new(rng.gen_range(-150.0..150.0), rng.gen_range(-50.0..50.0), rng.gen_range(-80.0..80.0)),
                0.0,
            );
            let traj = integrate_flight(&s0, &p, DEFAULT_DT, 0.6, Direction::Forward, None).unwrap();
            for w in traj.windows(2) {
                assert!(specific_energy(&w[1], &p) <= specific_energy(&w[0], &p) + 1e-9);
            }
        }
    }

    #[test]
    fn negated_spin_mirrors_laterally() {
        let p = tt();
        let s0 = BallState::new(Vector3::zeros(), Vector3::new(0.0, 8.0, 1.0), Vector3::new(0.0, 0.0, 90.0), 0.0);
        let mirrored = BallState { w: -s0.w, ..s0 };
        let a = integrate_flight(&s0, &p, DEFAULT_DT, 0.4, Direction::Forward, None).unwrap();
        let b = integrate_flight(&mirrored, &p, DEFAULT_DT, 0.4, Direction::Forward, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x.p.x, -y.p.x, epsilon = 1e-12);
            assert_abs_diff_eq!(x.p.y, y.p.y, epsilon = 1e-12);
            assert_abs_diff_eq!(x.p.z, y.p.z, epsilon = 1e-12);
        }
        assert!(a.last().unwrap().p.x.abs() > 1e-3);
    }

    #[test]
    fn alpha_examples() {
        let p = tt();
        let a = bounce_alpha(&Vector3::new(1.0, 0.0, -3.0), &Vector3::zeros(), &p).unwrap();
        assert_abs_diff_eq!(a, 1.665, epsilon = 1e-12);
        let a = bounce_alpha(&Vector3::new(0.0, 0.0, -3.0), &Vector3::zeros(), &p).unwrap();
        assert!(a.is_infinite());
        let a2 = bounce_alpha(&Vector3::new(2.0, 0.0, -3.0), &Vector3::zeros(), &p).unwrap();
        assert_abs_diff_eq!(a2, 1.665 / 2.0, epsilon = 1e-12);
        assert!(matches!(
            bounce_alpha(&Vector3::new(1.0, 0.0, 0.5), &Vector3::zeros(), &p),
            Err(PhysicsError::BallMovingAway { .. })
        ));
    }

    #[test]
    fn rolling_bounce_example() {
        let out = apply_bounce(&Vector3::new(1.0, 0.0, -3.0), &Vector3::zeros(), &tt()).unwrap();
        assert_eq!(out.regime, BounceRegime::Rolling);
        assert_abs_diff_eq!(out.v_plus, Vector3::new(0.6, 0.0, 2.55), epsilon = 1e-12);
        assert_abs_diff_eq!(out.w_plus, Vector3::new(0.0, 30.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn no_slip_impact_rolls() {
        let p = tt();
        // contact point at rest: v_x = w_y r, v_y = -w_x r
        let v = Vector3::new(2.0, -1.0, -3.0);
        let w = Vector3::new(1.0 / p.r, 2.0 / p.r, 7.0);
        let out = apply_bounce(&v, &w, &p).unwrap();
        assert!(out.alpha.is_infinite());
        assert_eq!(out.regime, BounceRegime::Rolling);
        let (a, b, _, _) = rolling_matrices(&p);
        assert_abs_diff_eq!(out.v_plus, a * v + b * w, epsilon = 1e-12);
    }

    #[test]
    fn sliding_bounce_example() {
        let p = tt();
        let out = apply_bounce(&Vector3::new(10.0, 0.0, -1.0), &Vector3::zeros(), &p).unwrap();
        assert_eq!(out.regime, BounceRegime::Sliding);
        let alpha = 0.3 * 1.85 / 10.0;
        assert_abs_diff_eq!(out.alpha, alpha, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v_plus, Vector3::new((1.0 - alpha) * 10.0, 0.0, 0.85), epsilon = 1e-12);
        assert_abs_diff_eq!(out.w_plus, Vector3::new(0.0, 3.0 * alpha / (2.0 * 0.02) * 10.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn regime_continuity_at_threshold() {
        let p = tt();
        let sliding = bounce_matrices(0.4, &p);
        let rolling = rolling_matrices(&p);
        for (s, r) in [(sliding.0, rolling.0), (sliding.1, rolling.1), (sliding.2, rolling.2), (sliding.3, rolling.3)] {
            assert_abs_diff_eq!(s, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn tennis_coefficient_examples() {
        let (c_d, c_m) = tennis_coefficients(&Vector3::new(50.0, 0.0, 0.0), &Vector3::zeros());
        assert_eq!(c_d, 0.6204);
        assert_eq!(c_m, 0.0);
        let (_, c_m) = tennis_coefficients(&Vector3::new(0.0, 30.0, 40.0), &Vector3::new(0.0, 100.0, 0.0));
        assert_abs_diff_eq!(c_m, 0.0468, epsilon = 1e-15);
    }

    #[test]
    fn tennis_zero_spin_has_no_magnus() {
        let p = PhysParams::tennis(Surface::Clay);
        let v = Vector3::new(30.0, 5.0, 2.0);
        let a = acceleration(&v, &Vector3::zeros(), &p);
        assert!(a.iter().all(|x| x.is_finite()));
        let lateral = a - p.gravity();
        assert_abs_diff_eq!(lateral.normalize(), -v.normalize(), epsilon = 1e-12);
    }

    #[test]
    fn params_from_name() {
        assert_eq!(PhysParams::from_name("tennis-grass").unwrap().k_cor, 0.68);
        assert_eq!(PhysParams::from_name("tennis-clay").unwrap().mu, 0.9);
        assert!(PhysParams::from_name("badminton").is_none());
    }

    proptest::proptest! {
        #[test]
        fn bounce_invariants(vx in -15.0..15.0f64, vy in -15.0..15.0f64, vz in -10.0..-0.01f64,
                             wx in -200.0..200.0f64, wy in -200.0..200.0f64, wz in -200.0..200.0f64) {
            let p = tt();
            let v = Vector3::new(vx, vy, vz);
            let w = Vector3::new(wx, wy, wz);
            let out = apply_bounce(&v, &w, &p).unwrap();
            proptest::prop_assert!((out.v_plus.z - 0.85 * vz.abs()).abs() <= 1e-15 * vz.abs().max(1.0));
            proptest::prop_assert_eq!(out.w_plus.z, wz);
        }
    }
}
