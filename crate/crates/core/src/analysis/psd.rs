//! One-sided power spectral density of time traces.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{SignalTrace, XKind};

pub const MIN_PSD_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    /// Mean removed only.
    #[default]
    None,
    /// Least-squares line removed.
    LinearSubtract,
}

/// Least-squares line (slope, intercept) through (x, y).
pub fn linear_trend(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

fn is_uniform(x: &[f64]) -> bool {
    let dt = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    x.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs())
}

/// Linear interpolation onto an evenly spaced grid with the same end points and length.
pub fn resample_uniform(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let (x0, x1) = (x[0], x[n - 1]);
    let grid: Vec<f64> = (0..n).map(|i| x0 + (x1 - x0) * i as f64 / (n - 1) as f64).collect();
    let mut j = 0;
    let vals = grid
        .iter()
        .map(|&g| {
            while j + 2 < n && x[j + 1] < g {
                j += 1;
            }
            let u = (g - x[j]) / (x[j + 1] - x[j]);
            y[j] + u * (y[j + 1] - y[j])
        })
        .collect();
    (grid, vals)
}

/// Ascending, evenly spaced, background-corrected samples ready for the FFT.
fn prepare(x: &[f64], y: &[f64], background: Background) -> Result<(f64, Vec<f64>)> {
    if x.len() < MIN_PSD_SAMPLES {
        return invalid(format!("PSD needs at least {MIN_PSD_SAMPLES} samples, got {}", x.len()));
    }
    let (mut x, mut y) = (x.to_vec(), y.to_vec());
    if x[0] > x[1] {
        x.reverse();
        y.reverse();
    }
    if !is_uniform(&x) {
        (x, y) = resample_uniform(&x, &y);
    }
    let dt = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    match background {
        Background::None => {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            y.iter_mut().for_each(|v| *v -= m);
        }
        Background::LinearSubtract => {
            let (b, c) = linear_trend(&x, &y);
            y.iter_mut().zip(&x).for_each(|(v, t)| *v -= b * t + c);
        }
    }
    Ok((dt, y))
}

/// Unnormalized one-sided PSD of `y` zero-padded to `pad`× its length.
fn one_sided(dt: f64, y: &[f64], pad: usize) -> (Vec<f64>, Vec<f64>) {
    let m = y.len() * pad.max(1);
    let mut buf: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let half = m / 2;
    let freqs = (0..=half).map(|k| k as f64 / (m as f64 * dt)).collect();
    let power = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr();
            // Positive and negative frequencies fold together except at DC and Nyquist.
            if k == 0 || (m % 2 == 0 && k == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    (freqs, power)
}

/// Peak-normalized one-sided PSD of a time trace; frequencies in MHz for times in µs.
pub fn fft_psd(trace: &SignalTrace, background: Background) -> Result<SignalTrace> {
    fft_psd_padded(trace, background, 1)
}

/// As [`fft_psd`], with zero padding to `pad`× the trace length for a finer frequency grid.
pub fn fft_psd_padded(trace: &SignalTrace, background: Background, pad: usize) -> Result<SignalTrace> {
    if trace.x_kind != XKind::Time {
        return invalid("PSD needs a time-domain trace");
    }
    let (dt, y) = prepare(&trace.x, &trace.y, background)?;
    let (f, p) = one_sided(dt, &y, pad);
    let peak = p.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Numerical("trace has no power after background removal".into()));
    }
    let p = p.into_iter().map(|v| v / peak).collect();
    SignalTrace::noiseless(f, p, XKind::Frequency)
}

/// Frequency (MHz) of the strongest non-DC bin of a 16× zero-padded spectrum.
pub fn dominant_frequency(t: &[f64], y: &[f64], linear_background: bool) -> Result<f64> {
    let bg = if linear_background { Background::LinearSubtract } else { Background::None };
    let (dt, y) = prepare(t, y, bg)?;
    let (f, p) = one_sided(dt, &y, 16);
    // Skip the DC lobe: start after the first local minimum.
    let mut start = 1;
    while start + 1 < p.len() && p[start + 1] < p[start] {
        start += 1;
    }
    let k = (start..p.len())
        .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::Numerical("spectrum too short for a frequency seed".into()))?;
    Ok(f[k])
}
