//! Signal processing and least-squares fitting of measured or simulated traces.

pub mod lm;
pub mod models;
pub mod psd;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{SignalTrace, XKind};

pub use models::{
    fit_decaying_cosine, fit_exponential, fit_lorentzian, Baseline, CosineOptions, Envelope, LorentzianInit,
    NO_DECAY_FLAG,
};
pub use psd::{fft_psd, Background};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// 1σ uncertainty, √ of the covariance diagonal.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<FitParam>,
    /// Covariance of the reported parameters, in `params` order.
    pub covariance: Vec<Vec<f64>>,
    /// √χ² at the optimum (weighted by 1/σ² when the trace carries σ).
    pub residual_norm: f64,
    pub iterations: usize,
    /// Lorentzian half width at half maximum, quoted as the line-position uncertainty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hwhm: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        self.param(name)
            .map(|p| p.value)
            .ok_or_else(|| Error::Invalid(format!("fit result has no parameter '{name}'")))
    }

    pub fn sigma(&self, name: &str) -> Result<f64> {
        self.param(name)
            .map(|p| p.sigma)
            .ok_or_else(|| Error::Invalid(format!("fit result has no parameter '{name}'")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Differential, reference-normalized signal from four averaged count traces.
///
/// yᵢ = (R⁺ᵢ − R⁻ᵢ)/(⟨R⁰⟩ − ⟨R¹⟩), σ_y = √((σ⁰)² + (σ¹)²)/(⟨R⁰⟩ − ⟨R¹⟩), where ⟨·⟩ averages
/// over the independent variable and σ⁰, σ¹ are the standard deviations of the reference traces
/// across it.
pub fn normalize_differential(
    x: Vec<f64>,
    x_kind: XKind,
    r_plus: &[f64],
    r_minus: &[f64],
    r_zero: &[f64],
    r_one: &[f64],
) -> Result<SignalTrace> {
    let n = x.len();
    if [r_plus.len(), r_minus.len(), r_zero.len(), r_one.len()].iter().any(|&l| l != n) {
        return invalid("count traces and x must all have the same length");
    }
    if n < 2 {
        return invalid("need at least two points to estimate reference spread");
    }
    let contrast = mean(r_zero) - mean(r_one);
    if !(contrast > 0.0) {
        return invalid(format!("reference contrast <R0> - <R1> must be positive, got {contrast}"));
    }
    let sigma = (sample_std(r_zero).powi(2) + sample_std(r_one).powi(2)).sqrt() / contrast;
    let y = r_plus.iter().zip(r_minus).map(|(p, m)| (p - m) / contrast).collect();
    SignalTrace::new(x, y, vec![sigma; n], x_kind)
}
