//! Hamiltonians, frame rotations and closed-form spectra for one S=1/2, I=1/2 defect.
//!
//! Frequencies are MHz (H/2π), fields are gauss, electron γ is MHz/G and nuclear γ is MHz/T.
//! Angles are degrees at the API surface.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eigvalsh, kron, spin_half, CMat};

pub const GAMMA_E_FREE: f64 = 2.8025;
pub const UNIAXIAL_TOL_MHZ: f64 = 1.0;
/// Ratio |γe B0| / max(|A∥|, |A⊥|) below which the secular form is flagged.
pub const SECULAR_WARN_RATIO: f64 = 10.0;
pub const GAUSS_PER_TESLA: f64 = 1e4;
pub const PROBE_AXIS_111: ProbeAxis = ProbeAxis { theta_nv: 54.7, phi_nv: 45.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineTensor {
    pub a_xx: f64,
    pub a_yy: f64,
    /// A∥ = A_zz in the principal frame.
    pub a_par: f64,
    #[serde(default)]
    pub theta_x: f64,
    #[serde(default)]
    pub phi_x: f64,
}

impl HyperfineTensor {
    pub fn uniaxial(a_par: f64, a_perp: f64, theta_x: f64, phi_x: f64) -> Self {
        Self { a_xx: a_perp, a_yy: a_perp, a_par, theta_x, phi_x }
    }

    pub fn is_uniaxial(&self, tol: f64) -> bool {
        (self.a_xx - self.a_yy).abs() <= tol
    }

    /// A⊥ taken as the mean of the transverse components.
    pub fn a_perp(&self) -> f64 {
        0.5 * (self.a_xx + self.a_yy)
    }

    pub fn with_angles(mut self, theta_x: f64, phi_x: f64) -> Self {
        self.theta_x = theta_x;
        self.phi_x = phi_x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a_xx", self.a_xx), ("a_yy", self.a_yy), ("a_par", self.a_par)] {
            if !v.is_finite() {
                return invalid(format!("hyperfine {name} is not finite"));
            }
        }
        if !self.theta_x.is_finite() || !self.phi_x.is_finite() {
            return invalid("hyperfine angles must be finite");
        }
        if !(0.0..=180.0).contains(&self.theta_x) {
            return invalid(format!("theta_x = {} outside [0, 180]", self.theta_x));
        }
        if !(self.phi_x > -180.0 && self.phi_x <= 180.0) {
            return invalid(format!("phi_x = {} outside (-180, 180]", self.phi_x));
        }
        Ok(())
    }

    pub fn principal_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&nalgebra::Vector3::new(self.a_xx, self.a_yy, self.a_par))
    }
}

/// Map an azimuth to (-180, 180].
pub fn wrap_phi(phi: f64) -> f64 {
    let mut p = (phi + 180.0).rem_euclid(360.0) - 180.0;
    if p <= -180.0 {
        p += 360.0;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAxis {
    pub theta_nv: f64,
    pub phi_nv: f64,
}

impl Default for ProbeAxis {
    fn default() -> Self {
        PROBE_AXIS_111
    }
}

fn default_gamma_e() -> f64 {
    GAMMA_E_FREE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    #[serde(default = "default_gamma_e")]
    pub gamma_e: f64,
    /// Signed nuclear gyromagnetic ratio, MHz/T.
    pub gamma_n: f64,
    pub hyperfine: HyperfineTensor,
    /// Probe–defect dipolar coupling along the defect axis, kHz.
    #[serde(default)]
    pub d_zz: f64,
    /// Transverse dipolar components, kHz. Only enter the zero-field Hamiltonian.
    #[serde(default)]
    pub d_zx: f64,
    #[serde(default)]
    pub d_zy: f64,
    #[serde(default)]
    pub probe_axis: ProbeAxis,
}

impl SpinSystem {
    pub fn new(gamma_n: f64, hyperfine: HyperfineTensor, d_zz_khz: f64) -> Self {
        Self {
            gamma_e: GAMMA_E_FREE,
            gamma_n,
            hyperfine,
            d_zz: d_zz_khz,
            d_zx: 0.0,
            d_zy: 0.0,
            probe_axis: PROBE_AXIS_111,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_e > 0.0) || !self.gamma_e.is_finite() {
            return invalid("gamma_e must be positive and finite");
        }
        if !self.gamma_n.is_finite() {
            return invalid("gamma_n must be finite");
        }
        if !(self.d_zz.is_finite() && self.d_zx.is_finite() && self.d_zy.is_finite()) {
            return invalid("dipolar couplings must be finite");
        }
        if !(self.probe_axis.theta_nv.is_finite() && self.probe_axis.phi_nv.is_finite()) {
            return invalid("probe axis angles must be finite");
        }
        self.hyperfine.validate()
    }

    /// Nuclear Zeeman frequency γn·B0 in MHz for B0 in gauss.
    pub fn nuclear_zeeman(&self, b0: f64) -> f64 {
        self.gamma_n * b0 / GAUSS_PER_TESLA
    }

    /// Dipolar components (d_zx, d_zy, d_zz) in MHz.
    pub fn dipolar_mhz(&self) -> [f64; 3] {
        [self.d_zx * 1e-3, self.d_zy * 1e-3, self.d_zz * 1e-3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecularComponents {
    pub a_zx: f64,
    pub a_zy: f64,
    pub a_zz: f64,
}

impl SecularComponents {
    pub fn splitting(&self) -> f64 {
        (self.a_zx * self.a_zx + self.a_zy * self.a_zy + self.a_zz * self.a_zz).sqrt()
    }
}

/// R(α, β) with γ = 0:
/// rows (cβcα, cβsα, −sβ), (−sα, cα, 0), (sβcα, sβsα, cβ).
pub fn rotation_matrix(alpha_deg: f64, beta_deg: f64) -> Matrix3<f64> {
    let (sa, ca) = alpha_deg.to_radians().sin_cos();
    let (sb, cb) = beta_deg.to_radians().sin_cos();
    Matrix3::new(
        cb * ca, cb * sa, -sb, //
        -sa, ca, 0.0, //
        sb * ca, sb * sa, cb,
    )
}

/// A' = R(φNV, θNV) Rᵀ(φX, θX) A_princ R(φX, θX) Rᵀ(φNV, θNV).
pub fn tensor_in_probe_frame(h: &HyperfineTensor, probe: ProbeAxis) -> Matrix3<f64> {
    let r_nv = rotation_matrix(probe.phi_nv, probe.theta_nv);
    let r_x = rotation_matrix(h.phi_x, h.theta_x);
    r_nv * r_x.transpose() * h.principal_matrix() * r_x * r_nv.transpose()
}

/// Secular components by explicit matrix conjugation. Valid for any tensor.
pub fn secular_components_conjugation(h: &HyperfineTensor, probe: ProbeAxis) -> SecularComponents {
    let a = tensor_in_probe_frame(h, probe);
    SecularComponents { a_zx: a[(2, 0)], a_zy: a[(2, 1)], a_zz: a[(2, 2)] }
}

/// Trigonometric closed forms for a uniaxial tensor.
pub fn secular_components_closed_form(
    a_par: f64,
    a_perp: f64,
    theta_x: f64,
    phi_x: f64,
    probe: ProbeAxis,
) -> SecularComponents {
    let tx = theta_x.to_radians();
    let tn = probe.theta_nv.to_radians();
    let dp = (probe.phi_nv - phi_x).to_radians();
    let da = a_par - a_perp;

    let a_zx = -0.125
        * da
        * (-4.0 * (2.0 * tx).sin() * (2.0 * tn).cos() * dp.cos()
            + (2.0 * tn).sin()
                * ((2.0 * tx).cos() * ((2.0 * dp).cos() + 3.0) + 2.0 * dp.sin().powi(2)));
    let a_zy = -da * tx.sin() * dp.sin() * (tn.sin() * tx.sin() * dp.cos() + tn.cos() * tx.cos());
    let a_zz = tn.cos().powi(2) * (a_par * tx.cos().powi(2) + a_perp * tx.sin().powi(2))
        + 0.25
            * tn.sin().powi(2)
            * (a_par + 3.0 * a_perp
                - da * ((2.0 * tx).cos() - 2.0 * (2.0 * dp).cos() * tx.sin().powi(2)))
        + da * tn.cos() * dp.cos() * tn.sin() * (2.0 * tx).sin();
    SecularComponents { a_zx, a_zy, a_zz }
}

fn check_angles(sys: &SpinSystem) -> Result<()> {
    let h = &sys.hyperfine;
    let all = [h.theta_x, h.phi_x, sys.probe_axis.theta_nv, sys.probe_axis.phi_nv];
    if all.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite angle in secular_components");
    }
    Ok(())
}

/// Closed form when uniaxial (tolerance 1 MHz), matrix conjugation otherwise.
pub fn secular_components(sys: &SpinSystem) -> Result<SecularComponents> {
    check_angles(sys)?;
    let h = &sys.hyperfine;
    if h.is_uniaxial(UNIAXIAL_TOL_MHZ) && h.a_xx == h.a_yy {
        Ok(secular_components_closed_form(h.a_par, h.a_xx, h.theta_x, h.phi_x, sys.probe_axis))
    } else {
        Ok(secular_components_conjugation(h, sys.probe_axis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpectrum {
    /// ε₁…ε₄ in MHz: ε₁,₂ in the upper electron manifold, ε₃,₄ in the lower.
    pub eps: [f64; 4],
    /// [ω_e−, ω_e+] = γeB0 ∓ (R₊ + R₋)/4.
    pub electron_transitions: [f64; 2],
    /// [ω_n−, ω_n+] from the first-order form A/2 ∓ (A_zz/A)|γn|B0.
    pub nuclear_transitions: [f64; 2],
    /// [ω_n−, ω_n+] from the exact level differences, same labelling.
    pub nuclear_transitions_exact: [f64; 2],
    pub splitting: f64,
    pub secular: SecularComponents,
    /// Labels ω_n± were swapped because γn < 0.
    pub labels_swapped: bool,
    pub warnings: Vec<String>,
}

impl LevelSpectrum {
    /// Electron-line splitting (ε₄ − ε₁) − (ε₃ − ε₂) = (R₊ + R₋)/2; equals A up to O((γnB0)²/A).
    pub fn splitting_from_levels(&self) -> f64 {
        let e = &self.eps;
        (e[3] - e[0]) - (e[2] - e[1])
    }
}

pub fn level_spectrum(sys: &SpinSystem, b0: f64) -> Result<LevelSpectrum> {
    if !b0.is_finite() || b0 < 0.0 {
        return invalid(format!("B0 must be finite and non-negative, got {b0}"));
    }
    sys.validate()?;
    let sec = secular_components(sys)?;
    let a = sec.splitting();
    if a == 0.0 && b0 == 0.0 {
        return invalid("degenerate spectrum: zero hyperfine splitting at zero field");
    }
    let mut warnings = Vec::new();
    let hmax = sys.hyperfine.a_par.abs().max(sys.hyperfine.a_xx.abs()).max(sys.hyperfine.a_yy.abs());
    let ez = sys.gamma_e * b0;
    if ez.abs() < SECULAR_WARN_RATIO * hmax {
        warnings.push(format!(
            "secular approximation weak: gamma_e*B0 = {ez:.3} MHz is below {SECULAR_WARN_RATIO}x max hyperfine {hmax:.3} MHz"
        ));
    }
    let gb = sys.nuclear_zeeman(b0);
    let transverse = sec.a_zx * sec.a_zx + sec.a_zy * sec.a_zy;
    let r_up = (transverse + (sec.a_zz - 2.0 * gb).powi(2)).sqrt();
    let r_dn = (transverse + (sec.a_zz + 2.0 * gb).powi(2)).sqrt();
    let eps = [
        0.5 * ez - 0.25 * r_up,
        0.5 * ez + 0.25 * r_up,
        -0.5 * ez - 0.25 * r_dn,
        -0.5 * ez + 0.25 * r_dn,
    ];
    let electron_transitions = [ez - 0.25 * (r_up + r_dn), ez + 0.25 * (r_up + r_dn)];

    let (_, wm, wp) = nuclear_frequencies(&sec, sys.gamma_n, b0);
    let n_first = [wm, wp];
    let mut n_exact = [eps[1] - eps[0], eps[3] - eps[2]];
    let labels_swapped = sys.gamma_n < 0.0;
    if labels_swapped {
        n_exact.swap(0, 1);
    }
    Ok(LevelSpectrum {
        eps,
        electron_transitions,
        nuclear_transitions: n_first,
        nuclear_transitions_exact: n_exact,
        splitting: a,
        secular: sec,
        labels_swapped,
        warnings,
    })
}

/// First-order form without building the full spectrum. Returns (A, ω_n−, ω_n+) with
/// ω_n∓ = A/2 ∓ (A_zz/A)|γn|B0, i.e. labels already swapped for γn < 0.
pub fn nuclear_frequencies(sec: &SecularComponents, gamma_n: f64, b0: f64) -> (f64, f64, f64) {
    let a = sec.splitting();
    let gb = gamma_n.abs() * b0 / GAUSS_PER_TESLA;
    let shift = if a > 0.0 { sec.a_zz / a * gb } else { 0.0 };
    (a, 0.5 * a - shift, 0.5 * a + shift)
}

/// Electron ⊗ nucleus operators (Sx, Sy, Sz, Ix, Iy, Iz) on the 4-dim defect space.
pub fn defect_operators() -> [CMat; 6] {
    let [sx, sy, sz] = spin_half();
    let id = crate::linalg::identity(2);
    [
        kron(&sx, &id),
        kron(&sy, &id),
        kron(&sz, &id),
        kron(&id, &sx),
        kron(&id, &sy),
        kron(&id, &sz),
    ]
}

/// Secular high-field Hamiltonian in the probe frame:
/// γe B0 Sz + Sz (A_zx Ix + A_zy Iy + A_zz Iz) − γn B0 Iz.
///
/// The nuclear Zeeman sign is the one whose eigenvalues reproduce the closed-form ε₁…ε₄.
pub fn secular_hamiltonian(sys: &SpinSystem, b0: f64) -> Result<CMat> {
    let sec = secular_components(sys)?;
    let [_, _, sz, ix, iy, iz] = defect_operators();
    let gb = sys.nuclear_zeeman(b0);
    Ok(&sz * c(sys.gamma_e * b0)
        + &sz * (&ix * c(sec.a_zx) + &iy * c(sec.a_zy) + &iz * c(sec.a_zz))
        - &iz * c(gb))
}

/// Zero-field Hamiltonian in the defect principal frame: A_xx SxIx + A_yy SyIy + A∥ SzIz.
pub fn zero_field_hamiltonian(h: &HyperfineTensor) -> CMat {
    let [sx, sy, sz, ix, iy, iz] = defect_operators();
    &sx * &ix * c(h.a_xx) + &sy * &iy * c(h.a_yy) + &sz * &iz * c(h.a_par)
}

/// Full defect Hamiltonian in a weak field of arbitrary direction (gauss, principal frame):
/// S·A·I + γe B·S − γn B·I. No secular truncation, so it holds where γe B0 is comparable to A.
pub fn weak_field_hamiltonian(h: &HyperfineTensor, field: [f64; 3], gamma_e: f64, gamma_n: f64) -> CMat {
    let [sx, sy, sz, ix, iy, iz] = defect_operators();
    let gn = gamma_n / GAUSS_PER_TESLA;
    let mut out = zero_field_hamiltonian(h);
    for (k, (s, i)) in [(&sx, &ix), (&sy, &iy), (&sz, &iz)].into_iter().enumerate() {
        out += s * c(gamma_e * field[k]) - i * c(gn * field[k]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakFieldLine {
    pub frequency: f64,
    /// |⟨i|Sx|j⟩|² for a drive along the defect x axis.
    pub weight: f64,
}

/// Electron-driven transitions of the weak-field Hamiltonian, sorted by frequency.
pub fn weak_field_lines(h: &HyperfineTensor, field: [f64; 3], gamma_e: f64, gamma_n: f64) -> Result<Vec<WeakFieldLine>> {
    for (k, v) in field.iter().enumerate() {
        require_finite(&format!("field[{k}]"), *v)?;
    }
    let (e, v) = crate::linalg::eigh(&weak_field_hamiltonian(h, field, gamma_e, gamma_n))?;
    let sx = &defect_operators()[0];
    let m = v.adjoint() * sx * &v;
    let mut out = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let weight = m[(i, j)].norm_sqr();
            if weight > 1e-12 {
                out.push(WeakFieldLine { frequency: (e[j] - e[i]).abs(), weight });
            }
        }
    }
    out.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    Ok(out)
}

pub fn secular_eigenvalues(sys: &SpinSystem, b0: f64) -> Result<Vec<f64>> {
    eigvalsh(&secular_hamiltonian(sys, b0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZfLine {
    pub label: String,
    pub frequency: f64,
    pub observable: bool,
}

fn line(label: &str, frequency: f64, observable: bool) -> ZfLine {
    ZfLine { label: label.to_string(), frequency, observable }
}

/// All six zero-field transitions between Bell states for a general diagonal tensor.
pub fn zf_catalog(h: &HyperfineTensor) -> Vec<ZfLine> {
    let (xx, yy, zz) = (h.a_xx, h.a_yy, h.a_par);
    vec![
        line("omega_1", (zz - yy).abs() / 2.0, true),
        line("omega_2", (zz + xx).abs() / 2.0, true),
        line("omega_3", (xx + yy).abs() / 2.0, false),
        line("omega_4", (zz - xx).abs() / 2.0, true),
        line("omega_5", (zz + yy).abs() / 2.0, true),
        line("omega_6", (xx - yy).abs() / 2.0, false),
    ]
}

/// Zero-field lines: three for a uniaxial tensor (1 MHz tolerance), the six-line catalog otherwise.
pub fn zf_transitions(h: &HyperfineTensor) -> Vec<ZfLine> {
    zf_transitions_with_tol(h, UNIAXIAL_TOL_MHZ)
}

pub fn zf_transitions_with_tol(h: &HyperfineTensor, tol: f64) -> Vec<ZfLine> {
    if h.is_uniaxial(tol) {
        let (par, perp) = (h.a_par, h.a_perp());
        vec![
            line("omega_minus", (par - perp).abs() / 2.0, true),
            line("omega_plus", (par + perp).abs() / 2.0, true),
            line("omega_perp", perp.abs(), false),
        ]
    } else {
        zf_catalog(h)
    }
}

/// Per-resonance uncertainty from an unknown residual field b_e plus the line half-width.
pub fn geomagnetic_uncertainty(b_e: f64, gamma_e: f64, linewidth_hwhm: f64) -> Result<f64> {
    if !(b_e >= 0.0) {
        return invalid("residual field b_e must be non-negative");
    }
    let shift = gamma_e * b_e / 2.0;
    Ok((shift * shift + linewidth_hwhm * linewidth_hwhm).sqrt())
}

/// Uncertainty of a hyperfine component built from two resonances with independent errors.
pub fn combined_component_uncertainty(per_line: f64) -> f64 {
    std::f64::consts::SQRT_2 * per_line
}

pub fn require_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Invalid(format!("{name} is not finite")))
    }
}
