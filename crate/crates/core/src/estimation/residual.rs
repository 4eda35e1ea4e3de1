//! Orientation scans: residual maps against measured splittings and A_zz/A maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MeasurementSet;
use crate::error::{invalid, Result};
use crate::spin_model::{nuclear_frequencies, secular_components_closed_form, ProbeAxis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualOptions {
    /// Grid spacing in degrees for both θ and φ.
    pub grid_deg: f64,
    /// Divide residuals by the measurement uncertainties instead of the measured values.
    /// Not the printed relative-error definition; off by default.
    pub weighted: bool,
    /// Grid points within this relative margin of the grid minimum form the argmin set.
    pub argmin_rel_tol: f64,
    /// Number of best grid points refined by golden-section descent.
    pub refine_starts: usize,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { grid_deg: 1.0, weighted: false, argmin_rel_tol: 0.05, refine_starts: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub theta: f64,
    pub phi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMap {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// ε[i][j] at (theta[i], phi[j]).
    pub eps: Vec<Vec<f64>>,
    pub grid_min: MapPoint,
    /// Grid minimum after local refinement.
    pub min: MapPoint,
    /// ε·Aᵐ/√3: the per-measurement residual in MHz implied by ε (unweighted maps only).
    pub abs_residual: Option<f64>,
    /// Grid points within `argmin_rel_tol` of the grid minimum, as (θ, φ).
    pub argmin: Vec<(f64, f64)>,
    pub weighted: bool,
}

/// Everything ε(θ, φ) depends on besides the angles.
#[derive(Debug, Clone, Copy)]
pub struct ResidualProblem {
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_n: f64,
    pub b0: f64,
    pub probe: ProbeAxis,
    /// Measured (A, ω_n−, ω_n+).
    pub measured: [f64; 3],
    /// Per-term denominators: measured values, or uncertainties when weighted.
    pub scale: [f64; 3],
}

impl ResidualProblem {
    pub fn new(meas: &MeasurementSet, a_par: f64, a_perp: f64, gamma_n: f64, probe: ProbeAxis, weighted: bool) -> Result<Self> {
        meas.validate()?;
        let measured = [meas.splitting.value, meas.omega_n_minus.value, meas.omega_n_plus.value];
        let scale = if weighted {
            let s = [meas.splitting.sigma, meas.omega_n_minus.sigma, meas.omega_n_plus.sigma];
            if s.iter().any(|v| !(*v > 0.0)) {
                return invalid("weighted residuals need positive measurement uncertainties");
            }
            s
        } else {
            measured
        };
        for (name, v) in [("a_par", a_par), ("a_perp", a_perp), ("gamma_n", gamma_n)] {
            if !v.is_finite() {
                return invalid(format!("{name} is not finite"));
            }
        }
        Ok(Self { a_par, a_perp, gamma_n, b0: meas.b0, probe, measured, scale })
    }

    /// Forward model (A, ω_n−, ω_n+) at a defect orientation.
    pub fn model(&self, theta: f64, phi: f64) -> [f64; 3] {
        let sec = secular_components_closed_form(self.a_par, self.a_perp, theta, phi, self.probe);
        let (a, wm, wp) = nuclear_frequencies(&sec, self.gamma_n, self.b0);
        [a, wm, wp]
    }

    pub fn eps(&self, theta: f64, phi: f64) -> f64 {
        let m = self.model(theta, phi);
        (0..3).map(|k| ((self.measured[k] - m[k]) / self.scale[k]).powi(2)).sum::<f64>().sqrt()
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of `f` on [a, b].
fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn wrap_phi(phi: f64) -> f64 {
    let w = (phi + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Alternating golden-section line searches in θ and φ within one grid cell of the start.
fn refine(p: &ResidualProblem, start: MapPoint, step: f64) -> MapPoint {
    let mut best = start;
    let (mut th, mut ph) = (start.theta, start.phi);
    for _ in 0..40 {
        let prev = best.value;
        th = golden(|t| p.eps(t, ph), (th - step).max(0.0), (th + step).min(180.0), 1e-11);
        ph = golden(|f| p.eps(th, f), ph - step, ph + step, 1e-11);
        let v = p.eps(th, ph);
        if v < best.value {
            best = MapPoint { theta: th, phi: wrap_phi(ph), value: v };
        }
        if prev - best.value <= 1e-15 * prev.max(1e-300) {
            break;
        }
    }
    best
}

/// θ ∈ [0, 180] and φ ∈ (−180, 180] at spacing `step` degrees.
pub fn angle_grid(step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(step > 0.0 && step <= 90.0) {
        return invalid(format!("grid step must be in (0, 90] degrees, got {step}"));
    }
    let nt = (180.0 / step).round() as usize;
    let np = (360.0 / step).round() as usize;
    let theta = (0..=nt).map(|i| (i as f64 * step).min(180.0)).collect();
    let phi = (1..=np).map(|j| (-180.0 + j as f64 * step).min(180.0)).collect();
    Ok((theta, phi))
}

/// Ordering for the global minimum: lowest value, then lowest θ, then lowest φ.
fn point_order(a: &MapPoint, b: &MapPoint) -> std::cmp::Ordering {
    a.value.total_cmp(&b.value).then(a.theta.total_cmp(&b.theta)).then(a.phi.total_cmp(&b.phi))
}

pub fn residual_map(problem: &ResidualProblem, opts: &ResidualOptions) -> Result<ResidualMap> {
    let (theta, phi) = angle_grid(opts.grid_deg)?;
    let eps: Vec<Vec<f64>> = theta.par_iter().map(|&t| phi.iter().map(|&f| problem.eps(t, f)).collect()).collect();

    let mut points: Vec<MapPoint> = Vec::with_capacity(theta.len() * phi.len());
    for (i, &t) in theta.iter().enumerate() {
        for (j, &f) in phi.iter().enumerate() {
            points.push(MapPoint { theta: t, phi: f, value: eps[i][j] });
        }
    }
    points.sort_by(point_order);
    let grid_min = points[0];
    let cut = grid_min.value * (1.0 + opts.argmin_rel_tol) + 1e-12;
    let argmin: Vec<(f64, f64)> = points.iter().take_while(|p| p.value <= cut).map(|p| (p.theta, p.phi)).collect();

    let refined: Vec<MapPoint> = points
        .par_iter()
        .take(opts.refine_starts.max(1))
        .map(|&p| refine(problem, p, opts.grid_deg))
        .collect();
    let min = refined.into_iter().min_by(point_order).expect("at least one start");

    let abs_residual = (!opts.weighted).then(|| min.value * problem.measured[0] / 3f64.sqrt());
    Ok(ResidualMap { theta, phi, eps, grid_min, min, abs_residual, argmin, weighted: opts.weighted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleMap {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub min: f64,
    pub max: f64,
}

/// |A_zz|/A over all defect orientations for a uniaxial tensor.
pub fn azz_ratio_map(a_par: f64, a_perp: f64, probe: ProbeAxis, grid_deg: f64) -> Result<AngleMap> {
    if a_par == 0.0 && a_perp == 0.0 {
        return invalid("A_zz/A is undefined for a zero tensor");
    }
    let (theta, phi) = angle_grid(grid_deg)?;
    let values: Vec<Vec<f64>> = theta
        .par_iter()
        .map(|&t| {
            phi.iter()
                .map(|&f| {
                    let s = secular_components_closed_form(a_par, a_perp, t, f, probe);
                    let a = s.splitting();
                    if a > 0.0 {
                        s.a_zz.abs() / a
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    let finite = values.iter().flatten().filter(|v| v.is_finite());
    let min = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(AngleMap { theta, phi, values, min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let (t, p) = angle_grid(1.0).unwrap();
        assert_eq!(t.len(), 181);
        assert_eq!(p.len(), 360);
        assert_eq!(*p.last().unwrap(), 180.0);
        assert!(angle_grid(0.0).is_err());
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let x = golden(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn isotropic_ratio_is_one() {
        let m = azz_ratio_map(5.0, 5.0, ProbeAxis::default(), 10.0).unwrap();
        assert!((m.min - 1.0).abs() < 1e-12 && (m.max - 1.0).abs() < 1e-12);
    }
}
