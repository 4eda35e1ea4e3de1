//! Damped least squares (Levenberg-Marquardt) with analytic Jacobians.
//!
//! Minimizes χ²(p) = Σ wᵢ (yᵢ − f(xᵢ; p))². A step is accepted only when it lowers χ², so the
//! accepted cost sequence is monotone non-increasing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A scalar model f(x; p) with an analytic gradient with respect to p.
pub trait Model {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// Writes ∂f/∂pₖ into `out` (length `n_params`).
    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative χ² decrease below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative parameter step below which the fit counts as converged.
    pub xtol: f64,
    /// Infinity norm of the scaled gradient below which the fit counts as converged.
    pub gtol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, ftol: 1e-15, xtol: 1e-13, gtol: 1e-14, lambda0: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Weighted χ² at the optimum.
    pub cost: f64,
    /// JᵀWJ at the optimum.
    pub jtwj: DMatrix<f64>,
    pub iterations: usize,
    /// χ² after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl LmOutcome {
    /// Residual-scaled covariance (JᵀWJ)⁻¹ · χ²/(n − p). Falls back to a pseudo-inverse when
    /// JᵀWJ is singular (degenerate parameters get large variances instead of NaN).
    pub fn covariance(&self, n_points: usize) -> DMatrix<f64> {
        let p = self.params.len();
        let dof = n_points.saturating_sub(p).max(1) as f64;
        let s2 = self.cost / dof;
        let inv = match self.jtwj.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => self
                .jtwj
                .clone()
                .pseudo_inverse(1e-12 * self.jtwj.amax().max(f64::MIN_POSITIVE))
                .unwrap_or_else(|_| DMatrix::zeros(p, p)),
        };
        let c = inv * s2;
        (&c + c.transpose()) * 0.5
    }
}

pub fn weighted_cost<M: Model + ?Sized>(model: &M, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| {
            let r = yi - model.eval(xi, p);
            wi * r * r
        })
        .sum()
}

fn normal_equations<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let np = p.len();
    let mut a = DMatrix::zeros(np, np);
    let mut g = DVector::zeros(np);
    let mut d = vec![0.0; np];
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let r = yi - model.eval(xi, p);
        model.grad(xi, p, &mut d);
        for j in 0..np {
            g[j] += wi * d[j] * r;
            for k in 0..=j {
                a[(j, k)] += wi * d[j] * d[k];
            }
        }
    }
    for j in 0..np {
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
    }
    (a, g)
}

/// Fit `model` to (x, y) with per-point weights `w`, starting from `p0`.
pub fn fit<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p0: &[f64],
    opts: LmOptions,
) -> Result<LmOutcome> {
    let np = model.n_params();
    if p0.len() != np {
        return Err(Error::Invalid(format!("expected {np} initial parameters, got {}", p0.len())));
    }
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Invalid("x, y and weights differ in length".into()));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial parameters must be finite".into()));
    }
    let mut p = p0.to_vec();
    let mut cost = weighted_cost(model, x, y, w, &p);
    if !cost.is_finite() {
        return Err(Error::Numerical("model is not finite at the initial parameters".into()));
    }
    let mut history = vec![cost];
    let mut lambda = opts.lambda0;
    let mut nu = 2.0;
    let (mut a, mut g) = normal_equations(model, x, y, w, &p);
    // Marquardt scaling, kept non-decreasing so that stiff directions stay damped.
    let mut scale: Vec<f64> = (0..np).map(|j| a[(j, j)]).collect();
    let floor = 1e-12 * scale.iter().cloned().fold(0.0, f64::max).max(1e-300);

    for iter in 1..=opts.max_iterations {
        for j in 0..np {
            scale[j] = scale[j].max(a[(j, j)]).max(floor);
        }
        let grad_inf = (0..np).map(|j| g[j].abs() / scale[j].sqrt()).fold(0.0, f64::max);
        if grad_inf <= opts.gtol * cost.sqrt().max(1e-300) || cost == 0.0 {
            return Ok(LmOutcome { params: p, cost, jtwj: a, iterations: iter - 1, history });
        }
        let mut damped = a.clone();
        for j in 0..np {
            damped[(j, j)] += lambda * scale[j];
        }
        let step = match damped.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                lambda *= nu;
                nu *= 2.0;
                continue;
            }
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(pi, si)| pi + si).collect();
        let trial_cost = weighted_cost(model, x, y, w, &trial);
        let predicted = step.dot(&(&g * 2.0 - &a * &step));
        if trial_cost.is_finite() && trial_cost < cost {
            let rho = if predicted > 0.0 { (cost - trial_cost) / predicted } else { 1.0 };
            let rel_drop = (cost - trial_cost) / cost;
            let step_small = step
                .iter()
                .zip(&p)
                .all(|(s, pi)| s.abs() <= opts.xtol * (pi.abs() + opts.xtol));
            p = trial;
            cost = trial_cost;
            history.push(cost);
            lambda *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            (a, g) = normal_equations(model, x, y, w, &p);
            if rel_drop <= opts.ftol || step_small {
                return Ok(LmOutcome { params: p, cost, jtwj: a, iterations: iter, history });
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            let step_small = step
                .iter()
                .zip(&p)
                .all(|(s, pi)| s.abs() <= opts.xtol * (pi.abs() + opts.xtol));
            if step_small && lambda > 1e10 {
                // No descent direction left at machine precision: this is the optimum.
                return Ok(LmOutcome { params: p, cost, jtwj: a, iterations: iter, history });
            }
            if lambda > 1e30 {
                return Err(Error::NonConvergence { iterations: iter, best_residual: cost.sqrt() });
            }
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iterations, best_residual: cost.sqrt() })
}

/// Per-point weights: 1/σ² when every σ is positive, otherwise uniform.
pub fn weights_from_sigma(sigma: &[f64]) -> Vec<f64> {
    if !sigma.is_empty() && sigma.iter().all(|s| *s > 0.0) {
        sigma.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; sigma.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;
    impl Model for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] + p[1] * x
        }
        fn grad(&self, x: f64, _p: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = x;
        }
    }

    struct Exp;
    impl Model for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * (-p[1] * x).exp()
        }
        fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
            let e = (-p[1] * x).exp();
            out[0] = e;
            out[1] = -p[0] * x * e;
        }
    }

    #[test]
    fn linear_fit_is_exact() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let out = fit(&Line, &x, &y, &vec![1.0; 10], &[0.0, 0.0], LmOptions::default()).unwrap();
        assert!((out.params[0] - 2.0).abs() < 1e-10);
        assert!((out.params[1] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn cost_history_is_monotone() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * (-1.7 * x).exp() + 0.01 * (7.0 * x).sin()).collect();
        let out = fit(&Exp, &x, &y, &vec![1.0; 40], &[1.0, 0.2], LmOptions::default()).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!((out.params[1] - 1.7).abs() < 0.05);
    }

    #[test]
    fn iteration_cap_reports_best_residual() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * (-1.7 * x).exp()).collect();
        let opts = LmOptions { max_iterations: 1, ..Default::default() };
        match fit(&Exp, &x, &y, &vec![1.0; 40], &[0.1, 5.0], opts) {
            Err(Error::NonConvergence { iterations, best_residual }) => {
                assert_eq!(iterations, 1);
                assert!(best_residual.is_finite() && best_residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
