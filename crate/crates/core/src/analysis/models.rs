//! Fit models: shared-width multi-Lorentzian, decaying cosine and exponential.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{self, LmOptions, LmOutcome, Model};
use super::psd::dominant_frequency;
use super::{FitParam, FitResult};
use crate::error::{invalid, Error, Result};
use crate::trace::{SignalTrace, XKind};

/// y(x) = Σᵢ aᵢγ²/(γ² + (x − fᵢ)²) + b with params [b, γ, a₁, f₁, a₂, f₂, …].
#[derive(Debug, Clone, Copy)]
pub struct Lorentzian {
    pub n_peaks: usize,
}

impl Model for Lorentzian {
    fn n_params(&self) -> usize {
        2 + 2 * self.n_peaks
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let g2 = p[1] * p[1];
        let mut y = p[0];
        for k in 0..self.n_peaks {
            let dx = x - p[3 + 2 * k];
            y += p[2 + 2 * k] * g2 / (g2 + dx * dx);
        }
        y
    }

    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let g = p[1];
        let g2 = g * g;
        out[0] = 1.0;
        out[1] = 0.0;
        for k in 0..self.n_peaks {
            let a = p[2 + 2 * k];
            let dx = x - p[3 + 2 * k];
            let den = g2 + dx * dx;
            let l = g2 / den;
            out[1] += a * 2.0 * g * dx * dx / (den * den);
            out[2 + 2 * k] = l;
            out[3 + 2 * k] = a * 2.0 * g2 * dx / (den * den);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Envelope {
    /// e^(−t/T) with T free.
    FreeT,
    /// e^(−t/T₂ − 3t/(2T₁ᵉ)) with T₁ᵉ (µs) fixed and T₂ fitted.
    FixedT1e { t1e: f64 },
    /// e^(−(t/T)²).
    Stretched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    /// Adds b·t + c.
    Linear,
}

/// a·cos(2πf t + φ)·E(t; k) [+ b t + c] with params [a, f, φ, k, (b, c)], f in MHz and k = 1/T.
#[derive(Debug, Clone, Copy)]
pub struct DecayingCosine {
    pub envelope: Envelope,
    pub baseline: Baseline,
}

impl DecayingCosine {
    fn extra_rate(&self) -> f64 {
        match self.envelope {
            Envelope::FixedT1e { t1e } => 1.5 / t1e,
            _ => 0.0,
        }
    }

    /// Envelope value and its derivative with respect to k.
    fn env(&self, t: f64, k: f64) -> (f64, f64) {
        match self.envelope {
            Envelope::Stretched => {
                let e = (-(k * t).powi(2)).exp();
                (e, -2.0 * k * t * t * e)
            }
            _ => {
                let e = (-(k + self.extra_rate()) * t).exp();
                (e, -t * e)
            }
        }
    }
}

impl Model for DecayingCosine {
    fn n_params(&self) -> usize {
        match self.baseline {
            Baseline::None => 4,
            Baseline::Linear => 6,
        }
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        let (e, _) = self.env(t, p[3]);
        let mut y = p[0] * (2.0 * PI * p[1] * t + p[2]).cos() * e;
        if self.baseline == Baseline::Linear {
            y += p[4] * t + p[5];
        }
        y
    }

    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let (e, de) = self.env(t, p[3]);
        let arg = 2.0 * PI * p[1] * t + p[2];
        let (s, c) = arg.sin_cos();
        out[0] = c * e;
        out[1] = -p[0] * s * 2.0 * PI * t * e;
        out[2] = -p[0] * s * e;
        out[3] = p[0] * c * de;
        if self.baseline == Baseline::Linear {
            out[4] = t;
            out[5] = 1.0;
        }
    }
}

/// a₀e^(−k t) + b₀ with params [a₀, k, b₀] and k = 1/T.
#[derive(Debug, Clone, Copy)]
pub struct Exponential;

impl Model for Exponential {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-p[1] * t).exp() + p[2]
    }

    fn grad(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-p[1] * t).exp();
        out[0] = e;
        out[1] = -p[0] * t * e;
        out[2] = 1.0;
    }
}

/// Maps internal parameters to reported ones: `g` is ∂reported/∂internal.
struct Report {
    names: Vec<String>,
    values: Vec<f64>,
    g: DMatrix<f64>,
}

impl Report {
    fn new(n_internal: usize) -> Self {
        Self { names: Vec::new(), values: Vec::new(), g: DMatrix::zeros(0, n_internal) }
    }

    fn push(&mut self, name: impl Into<String>, value: f64, row: &[(usize, f64)]) {
        let r = self.g.nrows();
        self.g = self.g.clone().insert_row(r, 0.0);
        for &(j, v) in row {
            self.g[(r, j)] = v;
        }
        self.names.push(name.into());
        self.values.push(value);
    }

    fn finish(self, model: &str, out: &LmOutcome, n_points: usize, flags: Vec<String>) -> FitResult {
        let cov_int = out.covariance(n_points);
        let cov = &self.g * cov_int * self.g.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        let params = self
            .names
            .into_iter()
            .zip(self.values)
            .enumerate()
            .map(|(i, (name, value))| FitParam { name, value, sigma: cov[(i, i)].max(0.0).sqrt() })
            .collect();
        let n = cov.nrows();
        FitResult {
            model: model.to_string(),
            params,
            covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
            residual_norm: out.cost.sqrt(),
            iterations: out.iterations,
            hwhm: None,
            flags,
        }
    }
}

/// Traces are fitted in ascending-x order regardless of their stored direction.
fn ascending(trace: &SignalTrace) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut x, mut y, mut s) = (trace.x.clone(), trace.y.clone(), trace.sigma.clone());
    if x.len() > 1 && x[0] > x[1] {
        x.reverse();
        y.reverse();
        s.reverse();
    }
    (x, y, s)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Noise scale for peak thresholds: the quoted σ when present, otherwise a robust MAD estimate.
fn noise_scale(dev: &[f64], sigma: &[f64]) -> f64 {
    if sigma.iter().all(|s| *s > 0.0) {
        return median(sigma);
    }
    let abs: Vec<f64> = dev.iter().map(|d| d.abs()).collect();
    1.4826 * median(&abs)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LorentzianInit {
    /// (amplitude, centre) per peak.
    pub peaks: Vec<(f64, f64)>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub baseline: Option<f64>,
}

/// Seeds from local extrema of |y − median(y)| above 3σ, largest first, with each accepted
/// peak masking its half-maximum neighbourhood. Returned in ascending frequency.
pub fn seed_lorentzian(x: &[f64], y: &[f64], sigma: &[f64], n_peaks: usize) -> (LorentzianInit, bool) {
    let b = median(y);
    let dev: Vec<f64> = y.iter().map(|v| v - b).collect();
    let thresh = 3.0 * noise_scale(&dev, sigma);
    let n = x.len();
    let mut order: Vec<usize> = (0..n)
        .filter(|&i| {
            let a = dev[i].abs();
            (i == 0 || a >= dev[i - 1].abs()) && (i + 1 == n || a >= dev[i + 1].abs())
        })
        .collect();
    order.sort_by(|&i, &j| dev[j].abs().total_cmp(&dev[i].abs()).then(i.cmp(&j)));

    let step = if n > 1 { (x[n - 1] - x[0]) / (n - 1) as f64 } else { 1.0 };
    let mut masked = vec![false; n];
    let mut peaks = Vec::new();
    let mut widths = Vec::new();
    let mut all_above = true;
    for &i in &order {
        if peaks.len() == n_peaks {
            break;
        }
        if masked[i] {
            continue;
        }
        if dev[i].abs() <= thresh {
            all_above = false;
        }
        let half = dev[i] / 2.0;
        let inside = |k: usize| dev[k].signum() == dev[i].signum() && dev[k].abs() >= half.abs();
        let (mut lo, mut hi) = (i, i);
        while lo > 0 && inside(lo - 1) {
            lo -= 1;
        }
        while hi + 1 < n && inside(hi + 1) {
            hi += 1;
        }
        for m in masked.iter_mut().take(hi + 1).skip(lo) {
            *m = true;
        }
        widths.push(((x[hi] - x[lo]) / 2.0).max(step));
        peaks.push((dev[i], x[i]));
    }
    peaks.sort_by(|a, b| a.1.total_cmp(&b.1));
    let gamma = if widths.is_empty() { step } else { median(&widths) };
    (LorentzianInit { peaks, gamma: Some(gamma), baseline: Some(b) }, all_above)
}

/// Multi-Lorentzian least-squares fit with one shared width γ.
pub fn fit_lorentzian(trace: &SignalTrace, n_peaks: usize, init: Option<&LorentzianInit>) -> Result<FitResult> {
    if n_peaks == 0 {
        return invalid("n_peaks must be at least 1");
    }
    let need = (4 + n_peaks).max(2 * n_peaks + 3);
    if trace.len() < need {
        return invalid(format!("{n_peaks}-peak fit needs at least {need} points, trace has {}", trace.len()));
    }
    let (x, y, s) = ascending(trace);
    let mut flags = Vec::new();
    let seed = match init {
        Some(i) => {
            if i.peaks.len() != n_peaks {
                return invalid(format!("init has {} peaks, expected {n_peaks}", i.peaks.len()));
            }
            i.clone()
        }
        None => {
            let (seed, above) = seed_lorentzian(&x, &y, &s, n_peaks);
            if seed.peaks.len() < n_peaks {
                return invalid(format!("found only {} peak candidates for {n_peaks} peaks", seed.peaks.len()));
            }
            if !above {
                flags.push("some peak seeds are below 3 sigma".to_string());
            }
            seed
        }
    };
    let step = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    let mut p0 = vec![seed.baseline.unwrap_or_else(|| median(&y)), seed.gamma.unwrap_or(2.0 * step)];
    for &(a, f) in &seed.peaks {
        p0.push(a);
        p0.push(f);
    }
    let model = Lorentzian { n_peaks };
    let w = lm::weights_from_sigma(&s);
    let out = lm::fit(&model, &x, &y, &w, &p0, LmOptions::default())?;
    let p = &out.params;
    let gamma = p[1].abs();

    let mut idx: Vec<usize> = (0..n_peaks).collect();
    idx.sort_by(|&i, &j| p[3 + 2 * i].total_cmp(&p[3 + 2 * j]));
    for w in idx.windows(2) {
        if (p[3 + 2 * w[1]] - p[3 + 2 * w[0]]).abs() < step {
            flags.push(format!(
                "peaks at {:.4} and {:.4} are closer than the grid step",
                p[3 + 2 * w[0]],
                p[3 + 2 * w[1]]
            ));
        }
    }
    let mut rep = Report::new(model.n_params());
    rep.push("b", p[0], &[(0, 1.0)]);
    rep.push("gamma", gamma, &[(1, p[1].signum())]);
    for (k, &i) in idx.iter().enumerate() {
        rep.push(format!("a{}", k + 1), p[2 + 2 * i], &[(2 + 2 * i, 1.0)]);
        rep.push(format!("f{}", k + 1), p[3 + 2 * i], &[(3 + 2 * i, 1.0)]);
    }
    let mut res = rep.finish("lorentzian", &out, x.len(), flags);
    res.hwhm = Some(gamma);
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineOptions {
    pub envelope: Envelope,
    pub baseline: Baseline,
    /// Frequency seed in MHz; the dominant FFT bin when absent.
    #[serde(default)]
    pub freq_guess: Option<f64>,
}

impl Default for CosineOptions {
    fn default() -> Self {
        Self { envelope: Envelope::FreeT, baseline: Baseline::None, freq_guess: None }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Linear least squares for amplitude/phase (and baseline) at fixed frequency and rate.
fn linear_seed(model: &DecayingCosine, t: &[f64], y: &[f64], f: f64, k: f64) -> Vec<f64> {
    let ncol = if model.baseline == Baseline::Linear { 4 } else { 2 };
    let mut m = DMatrix::zeros(t.len(), ncol);
    for (i, &ti) in t.iter().enumerate() {
        let (e, _) = model.env(ti, k);
        let (s, c) = (2.0 * PI * f * ti).sin_cos();
        m[(i, 0)] = c * e;
        m[(i, 1)] = s * e;
        if ncol == 4 {
            m[(i, 2)] = ti;
            m[(i, 3)] = 1.0;
        }
    }
    let rhs = DVector::from_column_slice(y);
    let sol = m.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(ncol));
    // α cos + β sin = a cos(ωt + φ) with a = √(α² + β²), φ = atan2(−β, α).
    let mut p = vec![sol[0].hypot(sol[1]).max(1e-12), f, (-sol[1]).atan2(sol[0]), k];
    if ncol == 4 {
        p.push(sol[2]);
        p.push(sol[3]);
    }
    p
}

/// a·cos(ωt + φ)·e^(−t/T) [+ bt + c], with the envelope variants of [`Envelope`].
pub fn fit_decaying_cosine(trace: &SignalTrace, opts: CosineOptions) -> Result<FitResult> {
    if trace.x_kind != XKind::Time {
        return invalid("decaying-cosine fits need a time-domain trace");
    }
    if let Envelope::FixedT1e { t1e } = opts.envelope {
        if !(t1e > 0.0 && t1e.is_finite()) {
            return invalid(format!("T1e must be positive and finite, got {t1e}"));
        }
    }
    let model = DecayingCosine { envelope: opts.envelope, baseline: opts.baseline };
    let n = model.n_params();
    if trace.len() < n + 1 {
        return invalid(format!("decaying-cosine fit needs at least {} points", n + 1));
    }
    let (t, y, s) = ascending(trace);
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return invalid("trace spans zero time");
    }
    let f0 = match opts.freq_guess {
        Some(f) => f,
        None => dominant_frequency(&t, &y, opts.baseline == Baseline::Linear)?,
    };
    let w = lm::weights_from_sigma(&s);

    // A few decay-rate seeds; the lowest χ² wins. Only the fit error of the last start is kept.
    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for kf in [0.3, 1.0, 3.0] {
        let p0 = linear_seed(&model, &t, &y, f0, kf / span);
        match lm::fit(&model, &t, &y, &w, &p0, LmOptions::default()) {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.cost < b.cost) {
                    best = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let out = match best {
        Some(o) => o,
        None => return Err(last_err.expect("at least one start ran")),
    };
    let p = &out.params;
    let k = match opts.envelope {
        Envelope::Stretched => p[3].abs(),
        _ => p[3],
    };
    if !(k > 0.0) {
        return Err(Error::Inconsistent(format!("fitted decay time is not positive (1/T = {k:.3e} per us)")));
    }

    // Canonical sign: a > 0, f > 0, φ in (−π, π].
    let sa = p[0].signum();
    let sf = p[1].signum();
    let mut phi = p[2] * sf;
    if sa < 0.0 {
        phi += PI;
    }
    let phi = wrap_angle(phi);
    let dk = match opts.envelope {
        Envelope::Stretched => p[3].signum(),
        _ => 1.0,
    };
    let mut rep = Report::new(n);
    rep.push("a", p[0].abs(), &[(0, sa)]);
    rep.push("f", p[1].abs(), &[(1, sf)]);
    rep.push("omega", 2.0 * PI * p[1].abs(), &[(1, 2.0 * PI * sf)]);
    rep.push("phi", phi, &[(2, sf)]);
    let name = match opts.envelope {
        Envelope::FreeT => {
            rep.push("T", 1.0 / k, &[(3, -dk / (k * k))]);
            "decaying-cosine"
        }
        Envelope::Stretched => {
            rep.push("T", 1.0 / k, &[(3, -dk / (k * k))]);
            "stretched-cosine"
        }
        Envelope::FixedT1e { .. } => {
            let total = k + model.extra_rate();
            rep.push("T2", 1.0 / k, &[(3, -1.0 / (k * k))]);
            rep.push("T", 1.0 / total, &[(3, -1.0 / (total * total))]);
            "decaying-cosine-fixed-t1e"
        }
    };
    if opts.baseline == Baseline::Linear {
        rep.push("b", p[4], &[(4, 1.0)]);
        rep.push("c", p[5], &[(5, 1.0)]);
    }
    Ok(rep.finish(name, &out, t.len(), Vec::new()))
}

pub const NO_DECAY_FLAG: &str = "no decay detected";

/// F statistic below which the exponential is not preferred over a constant (≈3σ for two
/// extra parameters at typical trace lengths).
pub const NO_DECAY_F: f64 = 7.0;

/// a₀e^(−t/T) + b₀. A trace flat within its noise returns T = ∞ with [`NO_DECAY_FLAG`]: either the
/// peak-to-peak spread is within 3σ, or the fit improves χ² over a constant by less than [`NO_DECAY_F`].
pub fn fit_exponential(trace: &SignalTrace) -> Result<FitResult> {
    if trace.x_kind != XKind::Time {
        return invalid("exponential fits need a time-domain trace");
    }
    if trace.len() < 4 {
        return invalid("exponential fit needs at least 4 points");
    }
    let (t, y, s) = ascending(trace);
    let span = t[t.len() - 1] - t[0];
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let noise = if s.iter().all(|v| *v > 0.0) { median(&s) } else { 0.0 };
    let scale = ymax.abs().max(ymin.abs()).max(f64::MIN_POSITIVE);
    if ymax - ymin <= 3.0 * noise || ymax - ymin <= 1e-12 * scale {
        return Ok(no_decay(&y, &s));
    }
    let model = Exponential;
    let w = lm::weights_from_sigma(&s);
    let tail = y[y.len() - 1];
    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for kf in [0.3, 1.0, 3.0, 10.0] {
        let k0 = kf / span;
        let p0 = [y[0] - tail, k0, tail];
        match lm::fit(&model, &t, &y, &w, &p0, LmOptions::default()) {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.cost < b.cost) {
                    best = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let flat = no_decay(&y, &s);
    let dof = t.len() as f64 - 3.0;
    let insignificant = |cost: f64| {
        dof > 0.0 && cost > 0.0 && 0.5 * (flat.residual_norm.powi(2) - cost) / (cost / dof) < NO_DECAY_F
    };
    let out = match best {
        Some(o) => o,
        None => {
            let err = last_err.expect("at least one start ran");
            return match err {
                Error::NonConvergence { best_residual, .. } if insignificant(best_residual.powi(2)) => Ok(flat),
                e => Err(e),
            };
        }
    };
    let p = &out.params;
    if !(p[1] * span > 1e-9) || insignificant(out.cost) {
        return Ok(flat);
    }
    let mut rep = Report::new(3);
    rep.push("a0", p[0], &[(0, 1.0)]);
    rep.push("T", 1.0 / p[1], &[(1, -1.0 / (p[1] * p[1]))]);
    rep.push("b0", p[2], &[(2, 1.0)]);
    Ok(rep.finish("exponential", &out, t.len(), Vec::new()))
}

fn no_decay(y: &[f64], s: &[f64]) -> FitResult {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let w = lm::weights_from_sigma(s);
    let cost: f64 = y.iter().zip(&w).map(|(v, wi)| wi * (v - mean).powi(2)).sum();
    let var_mean = cost / (n - 1.0).max(1.0) / w.iter().sum::<f64>();
    FitResult {
        model: "exponential".into(),
        params: vec![
            FitParam { name: "a0".into(), value: 0.0, sigma: 0.0 },
            FitParam { name: "T".into(), value: f64::INFINITY, sigma: 0.0 },
            FitParam { name: "b0".into(), value: mean, sigma: var_mean.sqrt() },
        ],
        covariance: vec![vec![0.0; 3], vec![0.0; 3], vec![0.0, 0.0, var_mean]],
        residual_norm: cost.sqrt(),
        iterations: 0,
        hwhm: None,
        flags: vec![NO_DECAY_FLAG.to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(x: Vec<f64>, f: impl Fn(f64) -> f64, kind: XKind) -> SignalTrace {
        let y = x.iter().map(|&v| f(v)).collect();
        SignalTrace::noiseless(x, y, kind).unwrap()
    }

    #[test]
    fn single_lorentzian_exact() {
        let x: Vec<f64> = (0..201).map(|i| 8.0 + 0.03 * i as f64).collect();
        let t = trace(x, |x| 0.16 / (0.16 + (x - 11.0).powi(2)), XKind::Frequency);
        let r = fit_lorentzian(&t, 1, None).unwrap();
        assert!((r.value("f1").unwrap() - 11.0).abs() < 1e-6);
        assert!((r.value("gamma").unwrap() - 0.4).abs() < 1e-6);
        assert!((r.value("a1").unwrap() - 1.0).abs() < 1e-6);
        assert!(r.value("b").unwrap().abs() < 1e-6);
        assert_eq!(r.hwhm, Some(r.value("gamma").unwrap()));
    }

    #[test]
    fn cosine_exact() {
        let x: Vec<f64> = (0..151).map(|i| 0.2 * i as f64).collect();
        let t = trace(x, |t| 0.4 * (2.0 * PI * 0.07 * t + 0.3).cos() * (-t / 30.0).exp(), XKind::Time);
        let r = fit_decaying_cosine(&t, CosineOptions::default()).unwrap();
        assert!((r.value("f").unwrap() - 0.07).abs() < 1e-6);
        assert!((r.value("T").unwrap() - 30.0).abs() < 1e-6);
        assert!((r.value("phi").unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn flat_exponential_is_no_decay() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let t = trace(x, |_| 0.3, XKind::Time);
        let r = fit_exponential(&t).unwrap();
        assert!(r.flags.iter().any(|f| f == NO_DECAY_FLAG));
        assert!(r.value("T").unwrap().is_infinite());
    }
}
