//! The inverse problem: measured lines to hyperfine components, orientation consistency,
//! nuclear species and candidate defect structures.

pub mod db;
pub mod residual;

use serde::{Deserialize, Serialize};

use crate::analysis::FitResult;
use crate::error::{invalid, Error, Result};
use crate::spin_model::{HyperfineTensor, ProbeAxis, GAMMA_E_FREE, GAUSS_PER_TESLA};

pub use db::{default_defect_db, default_isotopes, DefectRecord, Isotope};
pub use residual::{azz_ratio_map, residual_map, AngleMap, MapPoint, ResidualMap, ResidualOptions, ResidualProblem};

pub const MEASUREMENT_SCHEMA_VERSION: u32 = 1;
/// Relative accuracy assumed for computed hyperfine values.
pub const DFT_ACCURACY: f64 = 0.2;
/// Isotopes whose |γ| lies within this fraction of the top candidate are reported as close.
pub const CLOSE_SPECIES_REL: f64 = 0.1;

/// A value with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }
}

/// A zero-field resonance with the coupling frequency measured on it (both MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingLine {
    pub frequency: f64,
    #[serde(default)]
    pub sigma: f64,
    pub d_zz: f64,
    #[serde(default)]
    pub d_sigma: f64,
}

/// Residual-field and linewidth contributions added to every zero-field line in quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geomagnetic {
    /// Residual field magnitude in gauss.
    pub b_e: f64,
    /// Line HWHM in MHz.
    pub linewidth: f64,
    #[serde(default = "gamma_e_default")]
    pub gamma_e: f64,
}

fn gamma_e_default() -> f64 {
    GAMMA_E_FREE
}

impl Geomagnetic {
    pub fn per_line(&self) -> Result<f64> {
        crate::spin_model::geomagnetic_uncertainty(self.b_e, self.gamma_e, self.linewidth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    #[serde(default = "measurement_schema")]
    pub schema_version: u32,
    /// Hyperfine splitting Aᵐ at field `b0`.
    pub splitting: Measured,
    pub omega_n_minus: Measured,
    pub omega_n_plus: Measured,
    /// Field in gauss, along the probe axis.
    pub b0: f64,
    #[serde(default)]
    pub zf_lines: Vec<CouplingLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geomagnetic: Option<Geomagnetic>,
    #[serde(default)]
    pub probe_axis: ProbeAxis,
}

fn measurement_schema() -> u32 {
    MEASUREMENT_SCHEMA_VERSION
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MEASUREMENT_SCHEMA_VERSION {
            return invalid(format!(
                "measurement schema_version {} unsupported (expected {MEASUREMENT_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for (name, m) in [
            ("splitting", self.splitting),
            ("omega_n_minus", self.omega_n_minus),
            ("omega_n_plus", self.omega_n_plus),
        ] {
            if !(m.value > 0.0 && m.value.is_finite()) {
                return invalid(format!("{name} must be positive and finite, got {}", m.value));
            }
            if !(m.sigma >= 0.0) {
                return invalid(format!("{name} uncertainty must be non-negative"));
            }
        }
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return invalid(format!("b0 must be positive, got {}", self.b0));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MeasurementSet = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineEstimate {
    pub a_par: Measured,
    pub a_perp: Measured,
}

impl HyperfineEstimate {
    /// Uniaxial tensor with unset angles.
    pub fn tensor(&self) -> HyperfineTensor {
        HyperfineTensor::uniaxial(self.a_par.value, self.a_perp.value, 0.0, 0.0)
    }
}

/// A∥ = ω₊ + ω₋ and A⊥ = ω₊ − ω₋ from the two observable zero-field lines of one defect.
///
/// Line uncertainties are combined with the residual-field term (when given) in quadrature.
pub fn extract_hyperfine_from_zf(
    lower: Measured,
    upper: Measured,
    geomagnetic: Option<&Geomagnetic>,
) -> Result<HyperfineEstimate> {
    for v in [lower.value, upper.value] {
        if !(v >= 0.0 && v.is_finite()) {
            return invalid(format!("zero-field line frequency must be non-negative, got {v}"));
        }
    }
    let a_perp = upper.value - lower.value;
    if a_perp < 0.0 {
        return Err(Error::Inconsistent(format!(
            "negative A_perp ({a_perp:.4} MHz): lines are mis-grouped or swapped"
        )));
    }
    let geo = match geomagnetic {
        Some(g) => g.per_line()?,
        None => 0.0,
    };
    let sl = lower.sigma.hypot(geo);
    let su = upper.sigma.hypot(geo);
    let s = sl.hypot(su);
    Ok(HyperfineEstimate {
        a_par: Measured::new(upper.value + lower.value, s),
        a_perp: Measured::new(a_perp, s),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineGrouping {
    /// Index pairs (lower frequency, higher frequency), ordered by the lower line.
    pub pairs: Vec<(usize, usize)>,
    pub unpaired: Vec<usize>,
}

/// Pairs lines whose couplings agree within the combined 2σ. A line compatible with more
/// than one other line is ambiguous and reported with all lines of its cluster.
pub fn group_lines_by_coupling(lines: &[CouplingLine]) -> Result<LineGrouping> {
    if lines.is_empty() {
        return invalid("no lines to group");
    }
    let n = lines.len();
    let compatible = |i: usize, j: usize| {
        let (a, b) = (&lines[i], &lines[j]);
        (a.d_zz - b.d_zz).abs() <= 2.0 * a.d_sigma.hypot(b.d_sigma)
    };
    let partners: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && compatible(i, j)).collect()).collect();
    for i in 0..n {
        if partners[i].len() > 1 {
            // Collect the whole connected cluster so every involved line is named.
            let mut cluster = vec![i];
            let mut k = 0;
            while k < cluster.len() {
                for &j in &partners[cluster[k]] {
                    if !cluster.contains(&j) {
                        cluster.push(j);
                    }
                }
                k += 1;
            }
            cluster.sort_unstable();
            return Err(Error::Ambiguous { candidates: cluster });
        }
    }
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lines[a].frequency.total_cmp(&lines[b].frequency).then(a.cmp(&b)));
    for &i in &order {
        if used[i] {
            continue;
        }
        match partners[i].first() {
            Some(&j) if !used[j] => {
                used[i] = true;
                used[j] = true;
                pairs.push((i, j));
            }
            _ => {
                used[i] = true;
                unpaired.push(i);
            }
        }
    }
    Ok(LineGrouping { pairs, unpaired })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesCandidate {
    pub isotope: String,
    pub gamma: f64,
    /// | |γ_est| − |γ| | / |γ|.
    pub rel_deviation: f64,
    /// Within 2σ of the estimate.
    pub within_uncertainty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesReport {
    /// |Δω|/(2B0) in MHz/T; zero when no splitting was resolved.
    pub gamma_est: f64,
    pub gamma_sigma: f64,
    /// Best candidate, or `None` for the zero-splitting sentinel.
    pub best: Option<String>,
    pub ranked: Vec<SpeciesCandidate>,
    /// Other isotopes with |γ| close to the best one: (isotope, relative gap).
    pub close_to_best: Vec<(String, f64)>,
}

/// γ_est = Δω/(2B0) compared by magnitude against the isotope table.
pub fn identify_species(delta_omega: Measured, b0_gauss: f64, table: &[Isotope]) -> Result<SpeciesReport> {
    if table.is_empty() {
        return invalid("isotope table is empty");
    }
    if !(b0_gauss > 0.0) {
        return invalid(format!("b0 must be positive, got {b0_gauss}"));
    }
    let b_t = b0_gauss / GAUSS_PER_TESLA;
    let g = delta_omega.value.abs() / (2.0 * b_t);
    let gs = delta_omega.sigma / (2.0 * b_t);
    let mut ranked: Vec<SpeciesCandidate> = table
        .iter()
        .map(|iso| {
            let gm = iso.gamma.abs();
            SpeciesCandidate {
                isotope: iso.symbol.clone(),
                gamma: iso.gamma,
                rel_deviation: (g - gm).abs() / gm,
                within_uncertainty: (g - gm).abs() <= 2.0 * gs,
            }
        })
        .collect();
    ranked.sort_by(|a, b| a.rel_deviation.total_cmp(&b.rel_deviation).then_with(|| a.isotope.cmp(&b.isotope)));
    if g == 0.0 {
        return Ok(SpeciesReport { gamma_est: 0.0, gamma_sigma: gs, best: None, ranked, close_to_best: Vec::new() });
    }
    let top = ranked[0].gamma.abs();
    let close_to_best = ranked[1..]
        .iter()
        .filter_map(|c| {
            let gap = (c.gamma.abs() - top).abs() / top;
            (gap <= CLOSE_SPECIES_REL || c.within_uncertainty).then(|| (c.isotope.clone(), gap))
        })
        .collect();
    Ok(SpeciesReport { gamma_est: g, gamma_sigma: gs, best: Some(ranked[0].isotope.clone()), ranked, close_to_best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectMatch {
    pub label: String,
    pub a_perp_calc: f64,
    pub a_par_calc: f64,
    pub d_a: f64,
    /// Measured components fall outside the ±20% band of the computed ones.
    pub outside_accuracy: bool,
}

/// Ranks database records by d_A = √((⟨A⊥ᶜ⟩ − A⊥)² + (A∥ᶜ − A∥)²), ties broken by label.
///
/// Signed values are compared as printed; `sign_agnostic` compares magnitudes of ⟨A⊥ᶜ⟩ and A∥ᶜ.
pub fn match_defect(a_par: f64, a_perp: f64, db: &[DefectRecord], sign_agnostic: bool) -> Vec<DefectMatch> {
    let mut out: Vec<DefectMatch> = db
        .iter()
        .map(|r| {
            let (mut perp, mut par) = (r.a_perp(), r.a_par());
            if sign_agnostic {
                perp = perp.abs();
                par = par.abs();
            }
            let outside = |calc: f64, meas: f64| (meas - calc).abs() > DFT_ACCURACY * calc.abs();
            DefectMatch {
                label: r.label.clone(),
                a_perp_calc: perp,
                a_par_calc: par,
                d_a: (perp - a_perp).hypot(par - a_par),
                outside_accuracy: outside(perp, a_perp) || outside(par, a_par),
            }
        })
        .collect();
    out.sort_by(|a, b| a.d_a.total_cmp(&b.d_a).then_with(|| a.label.cmp(&b.label)));
    out
}

/// Amplitude and HWHM of one resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakArea {
    pub a: Measured,
    pub gamma: Measured,
}

impl PeakArea {
    /// Peak `index` (1-based, ascending frequency) of a Lorentzian fit; the amplitude is taken
    /// by magnitude so that dips and peaks are treated alike.
    pub fn from_fit(fit: &FitResult, index: usize) -> Result<Self> {
        let a = fit.param(&format!("a{index}")).ok_or_else(|| Error::Invalid(format!("fit has no peak {index}")))?;
        let g = fit.param("gamma").ok_or_else(|| Error::Invalid("fit has no gamma".into()))?;
        Ok(Self { a: Measured::new(a.value.abs(), a.sigma), gamma: Measured::new(g.value.abs(), g.sigma) })
    }
}

/// p_n = (a↓γ↓ − a↑γ↑)/(a↓γ↓ + a↑γ↑) with first-order error propagation.
pub fn polarization_from_peaks(down: PeakArea, up: PeakArea) -> Result<Measured> {
    for (name, p) in [("down", down), ("up", up)] {
        if p.a.value < 0.0 || p.gamma.value < 0.0 {
            return invalid(format!("{name} peak amplitude and width must be non-negative"));
        }
    }
    let x = down.a.value * down.gamma.value;
    let y = up.a.value * up.gamma.value;
    let s = x + y;
    if !(s > 0.0) {
        return invalid("peak areas sum to zero");
    }
    let sx = (down.gamma.value * down.a.sigma).hypot(down.a.value * down.gamma.sigma);
    let sy = (up.gamma.value * up.a.sigma).hypot(up.a.value * up.gamma.sigma);
    let dpx = 2.0 * y / (s * s);
    let dpy = -2.0 * x / (s * s);
    Ok(Measured::new((x - y) / s, (dpx * sx).hypot(dpy * sy)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyOptions {
    pub residual: ResidualOptions,
    /// ε_min above this marks the measurement set inconsistent.
    pub max_eps: f64,
    pub sign_agnostic: bool,
    /// Use this γn (MHz/T) for the residual map instead of the top-ranked isotope.
    pub gamma_n: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { residual: ResidualOptions::default(), max_eps: 0.2, sign_agnostic: false, gamma_n: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub grouping: LineGrouping,
    /// Hyperfine estimate for each coupling-matched pair.
    pub pair_estimates: Vec<HyperfineEstimate>,
    /// The pair whose (A∥, A⊥) can produce the measured splitting.
    pub selected_pair: usize,
    pub hyperfine: HyperfineEstimate,
    pub species: SpeciesReport,
    pub gamma_n: f64,
    pub residual_min: MapPoint,
    pub residual_grid_min: MapPoint,
    pub abs_residual: Option<f64>,
    pub argmin: Vec<(f64, f64)>,
    pub defects: Vec<DefectMatch>,
    pub consistent: bool,
}

/// End-to-end identification. Returns the report and, separately, the full residual map.
pub fn identify(
    meas: &MeasurementSet,
    db: &[DefectRecord],
    isotopes: &[Isotope],
    opts: &IdentifyOptions,
) -> Result<(IdentificationReport, ResidualMap)> {
    meas.validate()?;
    if db.is_empty() {
        return invalid("defect database is empty");
    }
    let grouping = group_lines_by_coupling(&meas.zf_lines)?;
    if grouping.pairs.is_empty() {
        return invalid("no coupling-matched pair of zero-field lines");
    }
    let mut pair_estimates = Vec::new();
    for &(i, j) in &grouping.pairs {
        let (li, lj) = (&meas.zf_lines[i], &meas.zf_lines[j]);
        let (lo, hi) = if li.frequency <= lj.frequency { (li, lj) } else { (lj, li) };
        pair_estimates.push(extract_hyperfine_from_zf(
            Measured::new(lo.frequency, lo.sigma),
            Measured::new(hi.frequency, hi.sigma),
            meas.geomagnetic.as_ref(),
        )?);
    }
    // The splitting along any orientation lies between the principal values (plus slack for errors).
    let am = meas.splitting;
    let selected_pair = pair_estimates
        .iter()
        .position(|h| {
            let lo = h.a_par.value.abs().min(h.a_perp.value.abs());
            let hi = h.a_par.value.abs().max(h.a_perp.value.abs());
            let slack = 2.0 * am.sigma.hypot(h.a_par.sigma);
            am.value >= lo - slack && am.value <= hi + slack
        })
        .ok_or_else(|| Error::Inconsistent(format!("no zero-field pair can produce the splitting {} MHz", am.value)))?;
    let hyperfine = pair_estimates[selected_pair];

    let dw = Measured::new(
        meas.omega_n_plus.value - meas.omega_n_minus.value,
        meas.omega_n_plus.sigma.hypot(meas.omega_n_minus.sigma),
    );
    let species = identify_species(dw, meas.b0, isotopes)?;
    let gamma_n = match (opts.gamma_n, &species.best) {
        (Some(g), _) => g,
        (None, Some(best)) => isotopes.iter().find(|i| &i.symbol == best).map(|i| i.gamma).unwrap_or(0.0),
        (None, None) => return Err(Error::Inconsistent("no nuclear splitting resolved; cannot pick a species".into())),
    };
    let problem = ResidualProblem::new(
        meas,
        hyperfine.a_par.value,
        hyperfine.a_perp.value,
        gamma_n,
        meas.probe_axis,
        opts.residual.weighted,
    )?;
    let map = residual_map(&problem, &opts.residual)?;
    let defects = match_defect(hyperfine.a_par.value, hyperfine.a_perp.value, db, opts.sign_agnostic);
    let report = IdentificationReport {
        grouping,
        pair_estimates,
        selected_pair,
        hyperfine,
        species,
        gamma_n,
        residual_min: map.min,
        residual_grid_min: map.grid_min,
        abs_residual: map.abs_residual,
        argmin: map.argmin.clone(),
        defects,
        consistent: map.min.value <= opts.max_eps,
    };
    Ok((report, map))
}
