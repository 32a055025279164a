//! Small dense Levenberg-Marquardt solver.
//!
//! Residual functions may return `None` for parameters outside their domain;
//! such trial steps are rejected like any step that fails to decrease the cost.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iters: usize,
    pub initial_lambda: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_rtol: f64,
    /// Stop when the step is this small relative to the parameter norm.
    pub step_rtol: f64,
    /// Absolute cost under which the problem counts as solved.
    pub cost_atol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iters: 200, initial_lambda: 1e-3, cost_rtol: 1e-12, step_rtol: 1e-12, cost_atol: 1e-24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    StepTolerance,
    SmallCost,
    /// Damping grew without bound; the iterate is (numerically) stationary.
    DampingLimit,
    MaxIterations,
    /// The starting point itself is infeasible.
    InvalidStart,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        match self.termination {
            Termination::CostTolerance | Termination::StepTolerance | Termination::SmallCost => true,
            Termination::DampingLimit => self.accepted_steps > 0 || self.cost <= 1e-12,
            Termination::MaxIterations | Termination::InvalidStart => false,
        }
    }
}

/// Forward-difference Jacobian with one step per parameter.
pub fn forward_difference_jacobian<F>(
    residual: &mut F,
    x: &DVector<f64>,
    r0: &DVector<f64>,
    steps: &[f64],
) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = steps[j];
        xp[j] = x[j] + h;
        let rp = residual(&xp)?;
        xp[j] = x[j];
        jac.set_column(j, &((rp - r0) / h));
    }
    Some(jac)
}

/// Central-difference Jacobian; used where accuracy matters more than cost.
pub fn central_difference_jacobian<F>(residual: &mut F, x: &DVector<f64>, steps: &[f64]) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = steps[j];
        xp[j] = x[j] + h;
        let rp = residual(&xp)?;
        xp[j] = x[j] - h;
        let rm = residual(&xp)?;
        xp[j] = x[j];
        cols.push((rp - rm) / (2.0 * h));
    }
    Some(DMatrix::from_columns(&cols))
}

/// Minimizes `||residual(x)||^2`. `jacobian` receives the point and its residual.
pub fn levenberg_marquardt<F, J>(x0: DVector<f64>, mut residual: F, mut jacobian: J, cfg: &LmConfig) -> LmReport
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
    J: FnMut(&mut F, &DVector<f64>, &DVector<f64>) -> Option<DMatrix<f64>>,
{
    let mut x = x0;
    let Some(mut r) = residual(&x) else {
        return LmReport {
            params: x,
            cost: f64::INFINITY,
            iterations: 0,
            accepted_steps: 0,
            termination: Termination::InvalidStart,
            cost_history: vec![],
        };
    };
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut accepted = 0;
    let n = x.len();

    for iter in 0..cfg.max_iters {
        if cost <= cfg.cost_atol {
            return report(x, cost, iter, accepted, Termination::SmallCost, history);
        }
        let Some(jac) = jacobian(&mut residual, &x, &r) else {
            return report(x, cost, iter, accepted, Termination::DampingLimit, history);
        };
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return report(x, cost, iter, accepted, Termination::DampingLimit, history);
                    }
                    continue;
                }
            };
            let x_new = &x + &step;
            let trial = residual(&x_new).map(|rn| (rn.norm_squared(), rn));
            match trial {
                Some((c_new, r_new)) if c_new.is_finite() && c_new < cost => {
                    let rel = (cost - c_new) / cost.max(f64::MIN_POSITIVE);
                    let small_step = step.norm() <= cfg.step_rtol * (x.norm() + cfg.step_rtol);
                    x = x_new;
                    r = r_new;
                    cost = c_new;
                    history.push(cost);
                    accepted += 1;
                    lambda = (lambda / 3.0).max(1e-12);
                    if rel < cfg.cost_rtol {
                        return report(x, cost, iter + 1, accepted, Termination::CostTolerance, history);
                    }
                    if small_step {
                        return report(x, cost, iter + 1, accepted, Termination::StepTolerance, history);
                    }
                    break;
                }
                _ => {
                    lambda *= 4.0;
                    if lambda > 1e16 {
                        return report(x, cost, iter + 1, accepted, Termination::DampingLimit, history);
                    }
                }
            }
        }
    }
    report(x, cost, cfg.max_iters, accepted, Termination::MaxIterations, history)
}

fn report(
    params: DVector<f64>,
    cost: f64,
    iterations: usize,
    accepted_steps: usize,
    termination: Termination,
    cost_history: Vec<f64>,
) -> LmReport {
    LmReport { params, cost, iterations, accepted_steps, termination, cost_history }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fits_exponential() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let res = |x: &DVector<f64>| {
            Some(DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| x[0] * (x[1] * t).exp() - y)))
        };
        let rep = levenberg_marquardt(
            DVector::from_vec(vec![1.0, 0.0]),
            res,
            |f, x, r| forward_difference_jacobian(f, x, r, &[1e-7, 1e-7]),
            &LmConfig::default(),
        );
        assert!(rep.converged());
        assert_abs_diff_eq!(rep.params[0], 2.5, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.params[1], -1.3, epsilon = 1e-6);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_start() {
        let rep = levenberg_marquardt(
            DVector::from_vec(vec![1.0]),
            |_: &DVector<f64>| None,
            |f, x, r| forward_difference_jacobian(f, x, r, &[1e-6]),
            &LmConfig::default(),
        );
        assert_eq!(rep.termination, Termination::InvalidStart);
        assert!(!rep.converged());
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 1.7).powi(2) + 3.0, -5.0, 5.0, 1e-10);
        assert_abs_diff_eq!(x, 1.7, epsilon = 1e-7);
        assert_abs_diff_eq!(fx, 3.0, epsilon = 1e-12);
    }
}
