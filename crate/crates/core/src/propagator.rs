//! Density-matrix propagation on probe(2) ⊗ defect-electron(2) ⊗ defect-nucleus(2).
//!
//! The probe lives in its own resonant frame with no internal Hamiltonian. The defect evolves
//! exactly under its static Hamiltonian plus the probe–defect dipolar term. Defect pulses are
//! propagated in a rotating frame built on the defect eigenbasis: each level k gets a photon
//! number N_k = round((E_k − E_min)/ω), couplings with ΔN = ±1 are kept at rate Ω and the rest
//! are dropped. Absolute time is tracked so consecutive pulses stay phase-coherent.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    c, dagger, eigh, embed, expect, identity, kron, propagator, propagator_from_eig, spectral_norm, spin_half,
    unitarity_error, CMat,
};
use crate::sequences::{
    Block, DecayKind, ElectronState, HhcpMode, NuclearState, Observable, Pulse, PulseSequence, Target,
};
use crate::spin_model::{defect_operators, secular_hamiltonian, zero_field_hamiltonian, SpinSystem};
use crate::trace::SignalTrace;

pub const DIM: usize = 8;
pub const UNITARITY_TOL: f64 = 1e-12;
/// Relative tolerance for Hartmann-Hahn amplitude matching.
pub const HHCP_MATCH_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    Product,
    BellElectronNuclear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub rho: CMat,
    pub basis: Basis,
}

impl DensityState {
    /// ρ0 = (1/8)(I + 2η S_z^probe): probe polarized with efficiency η, defect fully mixed.
    pub fn initial(eta: f64) -> Self {
        let sz = probe_op(2);
        Self { rho: (identity(DIM) + sz * c(2.0 * eta)) * c(1.0 / DIM as f64), basis: Basis::Product }
    }

    pub fn trace_error(&self) -> f64 {
        (self.rho.trace() - c(1.0)).norm()
    }

    pub fn hermiticity_error(&self) -> f64 {
        crate::linalg::hermiticity_error(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::eigvalsh(&self.rho).map(|v| v[0]).unwrap_or(f64::NAN)
    }

    pub fn check(&self) -> Result<()> {
        if self.trace_error() > 1e-10 || self.hermiticity_error() > 1e-10 || self.min_eigenvalue() < -1e-10 {
            return Err(Error::Numerical(format!(
                "density matrix invalid (trace err {:.2e}, herm err {:.2e}, min eig {:.2e})",
                self.trace_error(),
                self.hermiticity_error(),
                self.min_eigenvalue()
            )));
        }
        Ok(())
    }
}

/// Phenomenological decay constants in µs; `None` means no decay from that channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoherenceParams {
    #[serde(default)]
    pub t1e: Option<f64>,
    #[serde(default)]
    pub t2_star_bath: Option<f64>,
    #[serde(default)]
    pub t2_bath: Option<f64>,
}

impl DecoherenceParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("t1e", self.t1e), ("t2_star_bath", self.t2_star_bath), ("t2_bath", self.t2_bath)] {
            if let Some(t) = v {
                if !(t > 0.0) {
                    return invalid(format!("{n} must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Total contrast decay rate 1/T = 1/T₂(*) + 3/(2T₁ᵉ) in 1/µs.
    pub fn total_rate(&self, kind: DecayKind) -> f64 {
        let bath = match kind {
            DecayKind::Ramsey => self.t2_star_bath,
            DecayKind::Echo => self.t2_bath,
        };
        bath.map_or(0.0, |t| 1.0 / t) + self.t1e.map_or(0.0, |t| 1.5 / t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "frame")]
pub enum Frame {
    Lab,
    Rotating { carrier: f64 },
    Bell,
}

/// Probe operator S_k (k = 0,1,2 for x,y,z) on the full space.
pub fn probe_op(k: usize) -> CMat {
    embed(&spin_half()[k], 0, 3)
}

fn lift_defect(op: &CMat) -> CMat {
    kron(&identity(2), op)
}

/// Bell transform U_b = exp(−i(π/2)·2 S_y I_x) on the defect space.
pub fn bell_transform() -> CMat {
    let [_, sy, _, ix, _, _] = defect_operators();
    propagator(&(&sy * &ix * c(2.0)), 0.25).expect("hermitian generator")
}

/// Static defect Hamiltonian (4×4): secular form at B0 > 0, principal-frame zero-field form at B0 = 0.
pub fn defect_hamiltonian(sys: &SpinSystem, b0: f64) -> Result<CMat> {
    if b0 > 0.0 {
        secular_hamiltonian(sys, b0)
    } else if b0 == 0.0 {
        Ok(zero_field_hamiltonian(&sys.hyperfine))
    } else {
        invalid(format!("B0 must be non-negative, got {b0}"))
    }
}

/// Defect-side dipolar operator D with H_dip = 2 S_z^probe ⊗ D.
fn dipolar_defect_operator(sys: &SpinSystem, b0: f64) -> CMat {
    let [sx, sy, sz, ..] = defect_operators();
    let [dzx, dzy, dzz] = sys.dipolar_mhz();
    if b0 > 0.0 {
        &sz * c(dzz)
    } else {
        &sx * c(dzx) + &sy * c(dzy) + &sz * c(dzz)
    }
}

fn dipolar_full(sys: &SpinSystem, b0: f64) -> CMat {
    kron(&(spin_half()[2].clone() * c(2.0)), &dipolar_defect_operator(sys, b0))
}

/// Full 8×8 Hamiltonian in the requested frame (MHz).
pub fn build_lab_hamiltonian(sys: &SpinSystem, b0: f64, frame: Frame) -> Result<CMat> {
    sys.validate()?;
    let hx = defect_hamiltonian(sys, b0)?;
    let lab = lift_defect(&hx) + dipolar_full(sys, b0);
    match frame {
        Frame::Lab => Ok(lab),
        Frame::Bell => {
            let ub = lift_defect(&bell_transform());
            Ok(dagger(&ub) * lab * ub)
        }
        Frame::Rotating { carrier } => {
            let reg = Register::new(sys, b0, RegisterOptions::default())?;
            let rf = reg.rotating_frame(carrier)?;
            let h = rf.static_part(&reg, true);
            let v = lift_defect(&reg.evecs);
            Ok(&v * h * dagger(&v))
        }
    }
}

/// ρ → U ρ U† with U = exp(−i2πHt).
pub fn evolve(state: &DensityState, h: &CMat, t: f64) -> Result<DensityState> {
    let u = propagator(h, t)?;
    let err = unitarity_error(&u);
    if err > 1e-10 {
        return Err(Error::Numerical(format!("propagator not unitary ({err:.2e})")));
    }
    Ok(DensityState { rho: &u * &state.rho * dagger(&u), basis: state.basis })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterOptions {
    /// Probe polarization efficiency η.
    pub eta: f64,
    /// Keep the secular part of the dipolar coupling during defect pulses.
    pub dipolar_during_pulses: bool,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self { eta: 1.0, dipolar_during_pulses: false }
    }
}

/// Defect eigenbasis labelled by dominant product state (electron, nucleus).
#[derive(Debug, Clone)]
struct Labels {
    /// index of the eigenvector for product state (e, n), e/n = 0 for up, 1 for down
    by_product: [[usize; 2]; 2],
}

/// Precomputed propagation data for one spin system at one field.
#[derive(Debug, Clone)]
pub struct Register {
    pub sys: SpinSystem,
    pub b0: f64,
    pub opts: RegisterOptions,
    /// Defect levels (ascending) and eigenvectors as columns.
    pub evals: Vec<f64>,
    pub evecs: CMat,
    free_vals: Vec<f64>,
    free_vecs: CMat,
    /// Dipolar defect operator in the defect eigenbasis.
    dip_eig: CMat,
    /// Free Hamiltonian without the dipolar term, eigen-decomposed.
    bare_vals: Vec<f64>,
    bare_vecs: CMat,
    labels: Option<Labels>,
}

struct RotatingFrame {
    carrier: f64,
    n: Vec<i64>,
}

impl RotatingFrame {
    /// Static part in the probe ⊗ eigenbasis coordinates: diag(E − ωN) plus ΔN = 0 dipolar blocks.
    fn static_part(&self, reg: &Register, with_dipolar: bool) -> CMat {
        let mut hx = CMat::zeros(4, 4);
        for k in 0..4 {
            hx[(k, k)] = c(reg.evals[k] - self.carrier * self.n[k] as f64);
        }
        let mut h = lift_defect(&hx);
        if with_dipolar {
            let mut d = CMat::zeros(4, 4);
            for k in 0..4 {
                for l in 0..4 {
                    if self.n[k] == self.n[l] {
                        d[(k, l)] = reg.dip_eig[(k, l)];
                    }
                }
            }
            h += kron(&(spin_half()[2].clone() * c(2.0)), &d);
        }
        h
    }

    /// RWA drive term (defect 4×4, eigenbasis) for operator V = Ω·S at phase φ.
    fn drive(&self, v_eig: &CMat, phase: f64) -> CMat {
        let mut w = CMat::zeros(4, 4);
        let e = Complex64::from_polar(1.0, phase);
        for k in 0..4 {
            for l in 0..4 {
                match self.n[k] - self.n[l] {
                    -1 => w[(k, l)] = v_eig[(k, l)] * e,
                    1 => w[(k, l)] = v_eig[(k, l)] * e.conj(),
                    _ => {}
                }
            }
        }
        w
    }

    /// exp(±i2πωN t) on the full space, sign = +1 or −1.
    fn phase_op(&self, t: f64, sign: f64) -> CMat {
        let d = DVector::from_iterator(
            DIM,
            (0..DIM).map(|i| Complex64::from_polar(1.0, sign * 2.0 * PI * self.carrier * self.n[i % 4] as f64 * t)),
        );
        CMat::from_diagonal(&d)
    }
}

impl Register {
    pub fn new(sys: &SpinSystem, b0: f64, opts: RegisterOptions) -> Result<Self> {
        sys.validate()?;
        if !(0.0..=1.0).contains(&opts.eta) {
            return invalid("eta must lie in [0, 1]");
        }
        let hx = defect_hamiltonian(sys, b0)?;
        let (evals, mut evecs) = eigh(&hx)?;
        fix_phases(&mut evecs);
        let dip = dipolar_defect_operator(sys, b0);
        let dip_eig = dagger(&evecs) * &dip * &evecs;
        let bare = lift_defect(&hx);
        let free = &bare + dipolar_full(sys, b0);
        let (free_vals, free_vecs) = eigh(&free)?;
        let (bare_vals, bare_vecs) = eigh(&bare)?;
        let labels = label_eigenvectors(&evecs);
        Ok(Self { sys: *sys, b0, opts, evals, evecs, free_vals, free_vecs, dip_eig, bare_vals, bare_vecs, labels })
    }

    fn labels(&self) -> Result<&Labels> {
        self.labels.as_ref().ok_or_else(|| {
            Error::Invalid("defect eigenstates have no product-state labels (zero field); gate blocks need B0 > 0".into())
        })
    }

    pub fn initial_state(&self) -> DensityState {
        DensityState::initial(self.opts.eta)
    }

    /// Lab → eigenbasis change of basis on the full space.
    fn v_full(&self) -> CMat {
        lift_defect(&self.evecs)
    }

    fn spread(&self) -> f64 {
        self.evals[3] - self.evals[0]
    }

    fn rotating_frame(&self, carrier: f64) -> Result<RotatingFrame> {
        if !(carrier > 0.0) || !carrier.is_finite() {
            return invalid(format!("defect pulse carrier must be positive, got {carrier}"));
        }
        let band = 2.0 * self.spread() + 100.0;
        if carrier > band {
            return invalid(format!(
                "carrier {carrier} MHz is far outside the simulated band (levels span {:.3} MHz)",
                self.spread()
            ));
        }
        let emin = self.evals[0];
        let n = self.evals.iter().map(|e| ((e - emin) / carrier).round() as i64).collect();
        Ok(RotatingFrame { carrier, n })
    }

    /// Defect drive operator Ω·S (electron) or Ω·I (nucleus) in the eigenbasis.
    fn drive_operator(&self, pulse: &Pulse) -> CMat {
        let ops = defect_operators();
        let base = match pulse.target {
            Target::DefectElectron => 0,
            Target::DefectNucleus => 3,
            Target::Probe => unreachable!("probe pulses are handled separately"),
        };
        let mut v = CMat::zeros(4, 4);
        for k in 0..3 {
            v += &ops[base + k] * c(pulse.omega[k]);
        }
        dagger(&self.evecs) * v * &self.evecs
    }

    /// π-pulse length 1/(4g) for the resonant coupling block, g its largest singular value.
    pub fn pi_duration(&self, pulse: &Pulse, x: f64) -> Result<f64> {
        let carrier = pulse.carrier.eval(x);
        let rf = self.rotating_frame(carrier)?;
        let v = self.drive_operator(pulse);
        let w = rf.drive(&v, 0.0);
        let mut resonant = CMat::zeros(4, 4);
        let tol = 1e-3 * carrier.max(1.0);
        for k in 0..4 {
            for l in 0..4 {
                let detune = (self.evals[k] - self.evals[l]).abs() - carrier;
                if detune.abs() < tol {
                    resonant[(k, l)] = w[(k, l)];
                }
            }
        }
        let g = spectral_norm(&resonant);
        if g == 0.0 {
            return invalid(format!("no resonant coupling at carrier {carrier} MHz for this drive"));
        }
        Ok(0.25 / g)
    }

    fn probe_hamiltonian(pulse: &Pulse, x: f64) -> CMat {
        let phi = pulse.phase.eval(x);
        let (s, co) = phi.sin_cos();
        let [ox, oy, oz] = pulse.omega;
        let sx = probe_op(0);
        let sy = probe_op(1);
        let sz = probe_op(2);
        &sx * c(ox * co - oy * s) + &sy * c(ox * s + oy * co) + &sz * c(oz)
    }

    /// Free evolution for `t` µs, dipolar coupling included.
    pub fn free_propagator(&self, t: f64) -> CMat {
        propagator_from_eig(&self.free_vals, &self.free_vecs, t)
    }

    /// Lab-frame propagator of one segment where the listed pulses are all on, starting at t0.
    fn segment(&self, pulses: &[&Pulse], x: f64, t0: f64, dt: f64) -> Result<CMat> {
        let probe: Vec<&&Pulse> = pulses.iter().filter(|p| p.target == Target::Probe).collect();
        let defect: Vec<&&Pulse> = pulses.iter().filter(|p| p.target != Target::Probe).collect();
        let hp = probe.first().map(|p| Self::probe_hamiltonian(p, x));
        if defect.is_empty() {
            let hp = hp.expect("segment has at least one pulse");
            // probe driven, defect free; dipolar on only if requested
            let h = if self.opts.dipolar_during_pulses {
                lift_defect(&defect_hamiltonian(&self.sys, self.b0)?) + dipolar_full(&self.sys, self.b0) + hp
            } else {
                let bare = propagator_from_eig(&self.bare_vals, &self.bare_vecs, dt);
                return Ok(propagator(&hp, dt)? * bare);
            };
            return propagator(&h, dt);
        }
        let carrier = defect[0].carrier.eval(x);
        if defect.iter().any(|p| (p.carrier.eval(x) - carrier).abs() > 1e-12) {
            return invalid("simultaneous defect pulses with different carriers cannot share one frame");
        }
        let rf = self.rotating_frame(carrier)?;
        let mut hx = CMat::zeros(4, 4);
        for p in &defect {
            hx += rf.drive(&self.drive_operator(p), p.phase.eval(x));
        }
        let mut h = rf.static_part(self, self.opts.dipolar_during_pulses) + lift_defect(&hx);
        if let Some(hp) = hp {
            // probe operators are untouched by the defect-only change of basis
            h += hp;
        }
        let u_rot = propagator(&h, dt)?;
        let u_eig = rf.phase_op(t0 + dt, -1.0) * u_rot * rf.phase_op(t0, 1.0);
        let v = self.v_full();
        Ok(&v * u_eig * dagger(&v))
    }

    /// Simultaneous pulses, split wherever a pulse ends.
    fn pulse_block(&self, pulses: &[Pulse], x: f64, t0: f64) -> Result<(CMat, f64)> {
        let durs: Vec<f64> = pulses.iter().map(|p| p.duration.eval(x)).collect();
        if durs.iter().any(|d| !(*d >= 0.0)) {
            return invalid("pulse duration evaluated negative");
        }
        let mut edges: Vec<f64> = durs.clone();
        edges.push(0.0);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let mut u = identity(DIM);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a <= 0.0 {
                continue;
            }
            let active: Vec<&Pulse> = pulses.iter().zip(&durs).filter(|(_, d)| **d >= b).map(|(p, _)| p).collect();
            u = self.segment(&active, x, t0 + a, b - a)? * u;
        }
        let total = edges.last().copied().unwrap_or(0.0);
        Ok((u, total))
    }

    fn projector(&self, pairs: &[(usize, usize)]) -> CMat {
        // pairs of (e, n) labels -> defect projector in the lab basis
        let l = self.labels.as_ref().expect("checked by caller");
        let mut p = CMat::zeros(4, 4);
        for &(e, n) in pairs {
            let col = self.evecs.column(l.by_product[e][n]).clone_owned();
            p += &col * col.adjoint();
        }
        p
    }

    fn ket(&self, e: usize, n: usize) -> DVector<Complex64> {
        let l = self.labels.as_ref().expect("checked by caller");
        self.evecs.column(l.by_product[e][n]).clone_owned()
    }

    /// Probe–electron iSWAP restricted to the listed nuclear labels, as an 8×8 unitary.
    fn iswap(&self, nuclear: &[usize]) -> CMat {
        let up = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let dn = DVector::from_vec(vec![c(0.0), c(1.0)]);
        let mut u = identity(DIM);
        for &n in nuclear {
            // |probe↑, e↓ n⟩ <-> |probe↓, e↑ n⟩
            let a = up.kronecker(&self.ket(1, n));
            let b = dn.kronecker(&self.ket(0, n));
            u -= &a * a.adjoint() + &b * b.adjoint();
            u += (&a * b.adjoint() + &b * a.adjoint()) * Complex64::i();
        }
        u
    }

    fn hhcp(&self, rho: &CMat, mode: HhcpMode, fidelity: f64, omega_p: f64, omega_d: f64) -> Result<CMat> {
        if ((omega_p - omega_d) / omega_p).abs() > HHCP_MATCH_TOL {
            return invalid(format!(
                "HHCP drive amplitudes unmatched: probe {omega_p} MHz vs defect {omega_d} MHz (tolerance {:.0}%)",
                HHCP_MATCH_TOL * 100.0
            ));
        }
        self.labels()?;
        let nuclear: Vec<usize> = match mode {
            HhcpMode::Both => vec![0, 1],
            HhcpMode::Conditional { nuclear } => vec![nuc_index(nuclear)],
        };
        let u = self.iswap(&nuclear);
        let ideal = &u * rho * dagger(&u);
        if fidelity >= 1.0 {
            return Ok(ideal);
        }
        let lossy = match mode {
            HhcpMode::Both => depolarize_probe_electron(rho, &self.labelled_basis()?),
            HhcpMode::Conditional { nuclear } => {
                let n = nuc_index(nuclear);
                let p_def = self.projector(&[(0, n), (1, n)]);
                let p = kron(&identity(2), &p_def);
                let q = identity(DIM) - &p;
                let w = (&p * rho).trace();
                &q * rho * &q + &p * (w / c(4.0))
            }
        };
        Ok(ideal * c(fidelity) + lossy * c(1.0 - fidelity))
    }

    /// Ideal π between two labelled defect states on the full space.
    fn cond_pi(&self, a: (usize, usize), b: (usize, usize)) -> CMat {
        let ka = self.ket(a.0, a.1);
        let kb = self.ket(b.0, b.1);
        let mut u = identity(4);
        u -= &ka * ka.adjoint() + &kb * kb.adjoint();
        u -= (&ka * kb.adjoint() + &kb * ka.adjoint()) * Complex64::i();
        lift_defect(&u)
    }

    fn observe(&self, rho: &CMat, obs: Observable) -> Result<f64> {
        Ok(match obs {
            Observable::ProbeX => expect(rho, &probe_op(0)),
            Observable::ProbeY => expect(rho, &probe_op(1)),
            Observable::ProbeZ => expect(rho, &probe_op(2)),
            Observable::NuclearPolarization => {
                self.labels()?;
                let down = lift_defect(&self.projector(&[(0, 1), (1, 1)]));
                let up = lift_defect(&self.projector(&[(0, 0), (1, 0)]));
                expect(rho, &down) - expect(rho, &up)
            }
            Observable::ElectronPolarization => {
                self.labels()?;
                let up = lift_defect(&self.projector(&[(0, 0), (0, 1)]));
                let down = lift_defect(&self.projector(&[(1, 0), (1, 1)]));
                expect(rho, &up) - expect(rho, &down)
            }
        })
    }

    /// Propagate ρ0 through the blocks up to the readout. Returns (ρ, free-evolution time, observable).
    fn propagate(&self, seq: &PulseSequence, x: f64, toggled: bool) -> Result<(CMat, f64, Observable)> {
        let mut rho = self.initial_state().rho;
        let mut t = 0.0;
        let mut free_time = 0.0;
        for block in &seq.blocks {
            match block {
                Block::Pulse { pulse } => {
                    let (u, d) = self.pulse_block(std::slice::from_ref(pulse), x, t)?;
                    rho = &u * rho * dagger(&u);
                    t += d;
                }
                Block::Simultaneous { pulses } => {
                    let (u, d) = self.pulse_block(pulses, x, t)?;
                    rho = &u * rho * dagger(&u);
                    t += d;
                }
                Block::Delay { duration } => {
                    let d = duration.eval(x);
                    if !(d >= 0.0) {
                        return invalid(format!("delay evaluated to {d} at sweep value {x}"));
                    }
                    let u = self.free_propagator(d);
                    rho = &u * rho * dagger(&u);
                    t += d;
                    free_time += d;
                }
                Block::Hhcp { mode, fidelity, omega_probe, omega_defect } => {
                    rho = self.hhcp(&rho, *mode, *fidelity, *omega_probe, *omega_defect)?;
                }
                Block::ElectronCondPi { control } => {
                    self.labels()?;
                    let n = nuc_index(*control);
                    let u = self.cond_pi((0, n), (1, n));
                    rho = &u * rho * dagger(&u);
                }
                Block::NuclearCondPi { control } => {
                    self.labels()?;
                    let e = match control {
                        ElectronState::Up => 0,
                        ElectronState::Down => 1,
                    };
                    let u = self.cond_pi((e, 0), (e, 1));
                    rho = &u * rho * dagger(&u);
                }
                Block::DefectDepolarize { fidelity } => {
                    let reduced = partial_trace_defect(&rho);
                    let mixed = kron(&reduced, &(identity(4) * c(0.25)));
                    rho = rho * c(*fidelity) + mixed * c(1.0 - fidelity);
                }
                Block::ProbeReset => {
                    let defect = partial_trace_probe(&rho);
                    let p0 = (identity(2) + spin_half()[2].clone() * c(2.0 * self.opts.eta)) * c(0.5);
                    rho = kron(&p0, &defect);
                }
                Block::TogglePi => {
                    if toggled {
                        let u = propagator(&probe_op(0), 0.5)?;
                        rho = &u * rho * dagger(&u);
                    }
                }
                Block::Readout { observable } => return Ok((rho, free_time, *observable)),
            }
        }
        invalid("sequence ended without readout")
    }

    /// One shot at sweep value x. Returns the readout and the accumulated free-evolution time.
    pub fn run_shot(&self, seq: &PulseSequence, x: f64, toggled: bool) -> Result<(f64, f64)> {
        let (rho, free_time, obs) = self.propagate(seq, x, toggled)?;
        Ok((self.observe(&rho, obs)?, free_time))
    }

    /// Readout at one sweep point, averaging the reset-toggle pair when enabled.
    pub fn run_point(&self, seq: &PulseSequence, x: f64) -> Result<(f64, f64)> {
        let (a, t) = self.run_shot(seq, x, false)?;
        if seq.reset_toggle {
            let (b, _) = self.run_shot(seq, x, true)?;
            Ok((0.5 * (a + b), t))
        } else {
            Ok((a, t))
        }
    }

    /// Density matrix just before the readout of one (untoggled) shot.
    pub fn final_state(&self, seq: &PulseSequence, x: f64) -> Result<DensityState> {
        let (rho, _, _) = self.propagate(seq, x, false)?;
        Ok(DensityState { rho, basis: Basis::Product })
    }

    /// Defect eigenvectors ordered as labelled product states (e, n) ↦ column 2e + n.
    fn labelled_basis(&self) -> Result<CMat> {
        let l = self.labels()?;
        let mut w = CMat::zeros(4, 4);
        for e in 0..2 {
            for n in 0..2 {
                w.set_column(2 * e + n, &self.evecs.column(l.by_product[e][n]));
            }
        }
        Ok(w)
    }
}

fn nuc_index(n: NuclearState) -> usize {
    match n {
        NuclearState::Up => 0,
        NuclearState::Down => 1,
    }
}

/// Make the largest component of each eigenvector real and positive.
fn fix_phases(v: &mut CMat) {
    for j in 0..v.ncols() {
        let mut best = 0;
        for i in 0..v.nrows() {
            if v[(i, j)].norm() > v[(best, j)].norm() + 1e-12 {
                best = i;
            }
        }
        let ph = v[(best, j)] / v[(best, j)].norm();
        let conj = ph.conj();
        for i in 0..v.nrows() {
            v[(i, j)] *= conj;
        }
    }
}

/// Assign each product state |e n⟩ (index 2e + n) to the eigenvector with largest overlap.
fn label_eigenvectors(v: &CMat) -> Option<Labels> {
    let mut by_product = [[usize::MAX; 2]; 2];
    let mut used = [false; 4];
    for p in 0..4 {
        let (mut best, mut w) = (usize::MAX, 0.0);
        for k in 0..4 {
            let o = v[(p, k)].norm_sqr();
            if o > w {
                best = k;
                w = o;
            }
        }
        if w <= 0.5 + 1e-9 || used[best] {
            return None;
        }
        used[best] = true;
        by_product[p / 2][p % 2] = best;
    }
    Some(Labels { by_product })
}

/// Tr over the probe: 4×4 defect state.
pub fn partial_trace_probe(rho: &CMat) -> CMat {
    let mut out = CMat::zeros(4, 4);
    for p in 0..2 {
        out += rho.view((4 * p, 4 * p), (4, 4));
    }
    out
}

/// Tr over the defect: 2×2 probe state.
pub fn partial_trace_defect(rho: &CMat) -> CMat {
    let mut out = CMat::zeros(2, 2);
    for a in 0..2 {
        for b in 0..2 {
            let mut s = c(0.0);
            for k in 0..4 {
                s += rho[(4 * a + k, 4 * b + k)];
            }
            out[(a, b)] = s;
        }
    }
    out
}

/// Replace the joint probe–electron state by I/4 while keeping the reduced nuclear state.
/// `w` maps labelled product coordinates to the lab basis of the defect.
fn depolarize_probe_electron(rho: &CMat, w: &CMat) -> CMat {
    let v = lift_defect(w);
    let r = dagger(&v) * rho * &v;
    let mut nuc = CMat::zeros(2, 2);
    for a in 0..2 {
        for b in 0..2 {
            let mut s = c(0.0);
            for p in 0..2 {
                for e in 0..2 {
                    s += r[(4 * p + 2 * e + a, 4 * p + 2 * e + b)];
                }
            }
            nuc[(a, b)] = s;
        }
    }
    let mixed = kron(&(identity(4) * c(0.25)), &nuc);
    &v * mixed * dagger(&v)
}

/// Multiply contrast by exp(−t/T) about `baseline`, with 1/T = 1/T₂(*) + 3/(2T₁ᵉ) and t = trace.x.
pub fn apply_relaxation_decay(
    trace: &SignalTrace,
    dec: &DecoherenceParams,
    kind: DecayKind,
    baseline: f64,
) -> Result<SignalTrace> {
    dec.validate()?;
    if trace.x.iter().any(|t| *t < 0.0) {
        return invalid("decay needs non-negative times");
    }
    let rate = dec.total_rate(kind);
    let y = trace.x.iter().zip(&trace.y).map(|(t, y)| baseline + (y - baseline) * (-t * rate).exp()).collect();
    let sigma = trace.x.iter().zip(&trace.sigma).map(|(t, s)| s * (-t * rate).exp()).collect();
    SignalTrace::new(trace.x.clone(), y, sigma, trace.x_kind)
}

/// Simulate every sweep point; points run in parallel and are merged in sweep order.
pub fn run_sequence(
    seq: &PulseSequence,
    sys: &SpinSystem,
    b0: f64,
    dec: &DecoherenceParams,
    opts: RegisterOptions,
) -> Result<SignalTrace> {
    seq.validate()?;
    dec.validate()?;
    let reg = Register::new(sys, b0, opts)?;
    let results: Vec<Result<(f64, f64)>> = seq.sweep.grid.par_iter().map(|&x| reg.run_point(seq, x)).collect();
    let mut y = Vec::with_capacity(results.len());
    let mut times = Vec::with_capacity(results.len());
    for r in results {
        let (v, t) = r?;
        y.push(v);
        times.push(t);
    }
    if let Some(kind) = seq.decay {
        let rate = dec.total_rate(kind);
        for (v, t) in y.iter_mut().zip(&times) {
            *v *= (-t * rate).exp();
        }
    }
    let n = y.len();
    SignalTrace::new(seq.sweep.grid.clone(), y, vec![0.0; n], seq.x_kind())
}

/// Several independent defects seen by one probe: normalized probe coherences multiply.
/// Only valid for probe-coherence readouts.
pub fn run_sequence_multi(
    seq: &PulseSequence,
    systems: &[SpinSystem],
    b0: f64,
    dec: &DecoherenceParams,
    opts: RegisterOptions,
) -> Result<SignalTrace> {
    if systems.is_empty() {
        return invalid("no spin systems given");
    }
    match seq.blocks.last() {
        Some(Block::Readout { observable }) if observable.is_probe_coherence() => {}
        _ => return invalid("multi-defect simulation needs a probe-coherence readout"),
    }
    if opts.eta == 0.0 {
        return invalid("multi-defect product needs eta > 0");
    }
    let full = 0.5 * opts.eta;
    let mut y = vec![full; seq.sweep.grid.len()];
    let mut base = None;
    for sys in systems {
        let t = run_sequence(seq, sys, b0, &DecoherenceParams::default(), opts)?;
        for (acc, v) in y.iter_mut().zip(&t.y) {
            *acc *= v / full;
        }
        base = Some(t);
    }
    let mut out = base.expect("at least one system");
    out.y = y;
    if let Some(kind) = seq.decay {
        // reuse the single-system free time: identical across systems for a shared program
        let reg = Register::new(&systems[0], b0, opts)?;
        let rate = dec.total_rate(kind);
        for (i, x) in seq.sweep.grid.iter().enumerate() {
            let (_, t) = reg.run_shot(seq, *x, false)?;
            out.y[i] *= (-t * rate).exp();
        }
    }
    Ok(out)
}

/// The HHCP gate on an explicit state, exposed for direct checks.
pub fn hhcp_iswap(
    state: &DensityState,
    sys: &SpinSystem,
    b0: f64,
    mode: HhcpMode,
    fidelity: f64,
    omega_probe: f64,
    omega_defect: f64,
) -> Result<DensityState> {
    let reg = Register::new(sys, b0, RegisterOptions::default())?;
    let rho = reg.hhcp(&state.rho, mode, fidelity, omega_probe, omega_defect)?;
    Ok(DensityState { rho, basis: state.basis })
}

/// Defect electron polarization P(e↑) − P(e↓) and nuclear polarization P(n↓) − P(n↑) of a state.
pub fn defect_polarizations(state: &DensityState, sys: &SpinSystem, b0: f64) -> Result<(f64, f64)> {
    let reg = Register::new(sys, b0, RegisterOptions::default())?;
    Ok((
        reg.observe(&state.rho, Observable::ElectronPolarization)?,
        reg.observe(&state.rho, Observable::NuclearPolarization)?,
    ))
}

/// Populations of the four labelled defect states (e, n) = (↑↑, ↑↓, ↓↑, ↓↓) for one nuclear manifold check.
pub fn labelled_populations(state: &DensityState, sys: &SpinSystem, b0: f64) -> Result<[f64; 4]> {
    let reg = Register::new(sys, b0, RegisterOptions::default())?;
    reg.labels()?;
    let mut out = [0.0; 4];
    for e in 0..2 {
        for n in 0..2 {
            out[2 * e + n] = expect(&state.rho, &lift_defect(&reg.projector(&[(e, n)])));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_model::HyperfineTensor;

    fn x1(d_khz: f64) -> SpinSystem {
        SpinSystem::new(42.577, HyperfineTensor::uniaxial(39.0, 25.0, 0.0, 0.0), d_khz)
    }

    #[test]
    fn zero_couplings_give_zero_matrix() {
        let mut s = SpinSystem::new(0.0, HyperfineTensor::uniaxial(0.0, 0.0, 0.0, 0.0), 0.0);
        s.gamma_e = 1.0;
        let h = build_lab_hamiltonian(&s, 0.0, Frame::Lab).unwrap();
        assert!(crate::linalg::max_abs(&h) == 0.0);
    }

    #[test]
    fn initial_state_is_valid() {
        let s = DensityState::initial(0.8);
        s.check().unwrap();
        assert!((expect(&s.rho, &probe_op(2)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn partial_traces_are_consistent() {
        let s = DensityState::initial(1.0);
        let p = partial_trace_defect(&s.rho);
        assert!((p[(0, 0)].re - 1.0).abs() < 1e-15);
        let d = partial_trace_probe(&s.rho);
        assert!((d[(0, 0)].re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn free_propagator_is_unitary() {
        let reg = Register::new(&x1(70.0), 0.0, RegisterOptions::default()).unwrap();
        assert!(unitarity_error(&reg.free_propagator(3.7)) < UNITARITY_TOL);
    }

    #[test]
    fn unmatched_hhcp_rejected() {
        let s = DensityState::initial(1.0);
        let r = hhcp_iswap(&s, &x1(0.0), 365.0, HhcpMode::Both, 1.0, 1.0, 1.02);
        assert!(r.is_err());
        assert!(hhcp_iswap(&s, &x1(0.0), 365.0, HhcpMode::Both, 1.0, 1.0, 1.005).is_ok());
    }
}
