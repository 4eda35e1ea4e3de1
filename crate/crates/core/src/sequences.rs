//! Declarative pulse programs and builders for the standard protocols.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

pub const SEQUENCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Probe,
    DefectElectron,
    DefectNucleus,
}

/// A block parameter that is either fixed or an affine function of the sweep value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Swept { sweep: SweepRef },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRef {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl Param {
    pub fn swept(scale: f64, offset: f64) -> Self {
        Param::Swept { sweep: SweepRef { scale, offset } }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Param::Fixed(v) => *v,
            Param::Swept { sweep } => sweep.offset + sweep.scale * x,
        }
    }

    pub fn is_swept(&self) -> bool {
        matches!(self, Param::Swept { .. })
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Fixed(v)
    }
}

/// Rabi amplitudes in MHz, carrier in MHz, phase in rad, duration in µs.
///
/// Probe pulses act in the probe's resonant frame, so the carrier is ignored there and Ω_z acts
/// as a detuning. Defect pulses use the drive 2(Ω·S)cos(2π·carrier·t + phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub target: Target,
    pub omega: [f64; 3],
    #[serde(default = "zero_param")]
    pub carrier: Param,
    #[serde(default = "zero_param")]
    pub phase: Param,
    pub duration: Param,
}

fn zero_param() -> Param {
    Param::Fixed(0.0)
}

impl Pulse {
    pub fn probe(omega: f64, phase: f64, duration: f64) -> Self {
        Self {
            target: Target::Probe,
            omega: [omega, 0.0, 0.0],
            carrier: Param::Fixed(0.0),
            phase: Param::Fixed(phase),
            duration: Param::Fixed(duration),
        }
    }

    /// Probe rotation by `angle` (rad) about an equatorial axis at `phase`.
    pub fn probe_rotation(omega: f64, angle: f64, phase: f64) -> Self {
        Self::probe(omega, phase, angle / (2.0 * PI * omega))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuclearState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElectronState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HhcpMode {
    /// Both hyperfine transitions driven: full probe–electron iSWAP.
    Both,
    /// Only the hyperfine line of one nuclear manifold.
    Conditional { nuclear: NuclearState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    ProbeX,
    ProbeY,
    ProbeZ,
    /// P(n↓) − P(n↑) in the defect eigenbasis.
    NuclearPolarization,
    /// P(e↑) − P(e↓) in the defect eigenbasis.
    ElectronPolarization,
}

impl Observable {
    pub fn is_probe_coherence(self) -> bool {
        matches!(self, Observable::ProbeX | Observable::ProbeY)
    }
}

fn default_rabi() -> f64 {
    1.0
}

fn unit_fidelity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "block")]
pub enum Block {
    Pulse { pulse: Pulse },
    /// Pulses starting together; the block lasts as long as the longest.
    Simultaneous { pulses: Vec<Pulse> },
    Delay { duration: Param },
    /// Effective Hartmann-Hahn iSWAP between the probe and the defect electron.
    Hhcp {
        mode: HhcpMode,
        #[serde(default = "unit_fidelity")]
        fidelity: f64,
        #[serde(default = "default_rabi")]
        omega_probe: f64,
        #[serde(default = "default_rabi")]
        omega_defect: f64,
    },
    /// Ideal selective π on the defect electron, conditioned on the nuclear state.
    ElectronCondPi { control: NuclearState },
    /// Ideal selective π on the defect nucleus, conditioned on the electron state.
    NuclearCondPi { control: ElectronState },
    /// Depolarizing loss on the defect (electron and nucleus) with the given fidelity.
    DefectDepolarize { fidelity: f64 },
    /// Optical re-initialization of the probe.
    ProbeReset,
    /// Ideal probe π applied only on the toggled shot of a reset-toggle pair.
    TogglePi,
    Readout { observable: Observable },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    Tau,
    Frequency,
    RfDuration,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    Ramsey,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub blocks: Vec<Block>,
    pub sweep: Sweep,
    /// Phase-modulation frequency of the final π/2 (kHz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_mod: Option<f64>,
    #[serde(default)]
    pub reset_toggle: bool,
    /// Which coherence time governs the envelope applied after propagation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayKind>,
}

fn schema_version() -> u32 {
    SEQUENCE_SCHEMA_VERSION
}

impl PulseSequence {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let seq: PulseSequence = serde_json::from_str(text)?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn x_kind(&self) -> crate::trace::XKind {
        match self.sweep.variable {
            SweepVariable::Frequency => crate::trace::XKind::Frequency,
            _ => crate::trace::XKind::Time,
        }
    }

    /// Structural checks shared by the builders and the propagator.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SEQUENCE_SCHEMA_VERSION {
            return invalid(format!(
                "sequence schema_version {} unsupported (expected {SEQUENCE_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.sweep.grid.is_empty() {
            return invalid("sweep grid is empty");
        }
        if self.sweep.grid.iter().any(|v| !v.is_finite()) {
            return invalid("sweep grid has non-finite values");
        }
        match self.blocks.last() {
            Some(Block::Readout { .. }) => {}
            _ => return invalid("sequence must end with a readout block"),
        }
        let n_readout = self.blocks.iter().filter(|b| matches!(b, Block::Readout { .. })).count();
        if n_readout != 1 {
            return invalid("sequence must contain exactly one readout block");
        }
        let has_toggle = self.blocks.iter().any(|b| matches!(b, Block::TogglePi));
        if has_toggle != self.reset_toggle {
            return invalid("reset_toggle flag and toggle-pi blocks must appear together");
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let ctx = |m: &str| format!("block {i}: {m}");
            match b {
                Block::Pulse { pulse } => check_pulse(pulse).map_err(|e| crate::Error::Invalid(ctx(&e.to_string())))?,
                Block::Simultaneous { pulses } => {
                    if pulses.is_empty() {
                        return invalid(ctx("simultaneous block has no pulses"));
                    }
                    for p in pulses {
                        check_pulse(p).map_err(|e| crate::Error::Invalid(ctx(&e.to_string())))?;
                    }
                    let probes = pulses.iter().filter(|p| p.target == Target::Probe).count();
                    if probes > 1 {
                        return invalid(ctx("more than one probe pulse in a simultaneous block"));
                    }
                }
                Block::Delay { duration } => {
                    if let Param::Fixed(d) = duration {
                        if !(*d >= 0.0) {
                            return invalid(ctx("negative delay"));
                        }
                    }
                }
                Block::Hhcp { fidelity, omega_probe, omega_defect, .. } => {
                    check_fidelity(*fidelity).map_err(|e| crate::Error::Invalid(ctx(&e.to_string())))?;
                    if !(*omega_probe > 0.0 && *omega_defect > 0.0) {
                        return invalid(ctx("HHCP drive amplitudes must be positive"));
                    }
                }
                Block::DefectDepolarize { fidelity } => {
                    check_fidelity(*fidelity).map_err(|e| crate::Error::Invalid(ctx(&e.to_string())))?
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn check_fidelity(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return invalid(format!("fidelity {f} outside [0, 1]"));
    }
    Ok(())
}

fn check_pulse(p: &Pulse) -> Result<()> {
    if p.omega.iter().any(|v| !v.is_finite()) {
        return invalid("pulse amplitude is not finite");
    }
    if p.omega.iter().all(|v| *v == 0.0) {
        return invalid("pulse has all Rabi components zero");
    }
    if let Param::Fixed(d) = p.duration {
        if !(d >= 0.0) {
            return invalid("pulse duration must be non-negative");
        }
    }
    Ok(())
}

/// Shared knobs for the DEER family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeerOptions {
    /// Defect drive amplitudes (Ω_x, Ω_y, Ω_z) in MHz.
    pub defect_omega: [f64; 3],
    /// Defect π duration; defaults to 1/(2|Ω|).
    pub defect_t_pi: Option<f64>,
    pub probe_omega: f64,
}

impl Default for DeerOptions {
    fn default() -> Self {
        Self { defect_omega: [1.0, 0.0, 0.0], defect_t_pi: None, probe_omega: 10.0 }
    }
}

impl DeerOptions {
    fn t_pi(&self) -> f64 {
        self.defect_t_pi.unwrap_or_else(|| {
            let w = self.defect_omega.iter().map(|v| v * v).sum::<f64>().sqrt();
            0.5 / w
        })
    }
}

fn deer_blocks(half_tau: Param, carrier: Param, opts: &DeerOptions) -> Vec<Block> {
    let y = PI / 2.0;
    vec![
        Block::Pulse { pulse: Pulse::probe_rotation(opts.probe_omega, PI / 2.0, y) },
        Block::Delay { duration: half_tau },
        Block::Simultaneous {
            pulses: vec![
                Pulse::probe_rotation(opts.probe_omega, PI, 0.0),
                Pulse {
                    target: Target::DefectElectron,
                    omega: opts.defect_omega,
                    carrier,
                    phase: Param::Fixed(0.0),
                    duration: Param::Fixed(opts.t_pi()),
                },
            ],
        },
        Block::Delay { duration: half_tau },
        Block::Readout { observable: Observable::ProbeX },
    ]
}

/// Probe spin echo with a defect recoupling π-pulse at each swept frequency.
pub fn make_deer(tau: f64, freq_grid: &[f64], opts: &DeerOptions) -> Result<PulseSequence> {
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    if freq_grid.is_empty() {
        return invalid("frequency grid is empty");
    }
    let seq = PulseSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        name: "deer".into(),
        blocks: deer_blocks(Param::Fixed(tau / 2.0), Param::swept(1.0, 0.0), opts),
        sweep: Sweep { variable: SweepVariable::Frequency, grid: freq_grid.to_vec() },
        phase_mod: None,
        reset_toggle: false,
        decay: Some(DecayKind::Echo),
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ZfDeerMode {
    /// Fixed τ, swept defect carrier.
    FrequencySweep { tau: f64, freqs: Vec<f64> },
    /// Fixed carrier, swept total echo time τ.
    TimeSweep { carrier: f64, taus: Vec<f64> },
}

/// DEER at zero field. Same program as [`make_deer`]; the field enters through the simulation.
pub fn make_zf_deer(mode: &ZfDeerMode, opts: &DeerOptions) -> Result<PulseSequence> {
    let (blocks, sweep) = match mode {
        ZfDeerMode::FrequencySweep { tau, freqs } => {
            if !(*tau > 0.0) {
                return invalid("tau must be positive");
            }
            (
                deer_blocks(Param::Fixed(tau / 2.0), Param::swept(1.0, 0.0), opts),
                Sweep { variable: SweepVariable::Frequency, grid: freqs.clone() },
            )
        }
        ZfDeerMode::TimeSweep { carrier, taus } => {
            if taus.iter().any(|t| *t < 0.0) {
                return invalid("tau values must be non-negative");
            }
            (
                deer_blocks(Param::swept(0.5, 0.0), Param::Fixed(*carrier), opts),
                Sweep { variable: SweepVariable::Tau, grid: taus.clone() },
            )
        }
    };
    let seq = PulseSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        name: "zf-deer".into(),
        blocks,
        sweep,
        phase_mod: None,
        reset_toggle: false,
        decay: Some(DecayKind::Echo),
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeetrMode {
    Spectroscopy,
    Rabi,
    Ramsey,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeetrOptions {
    /// Nuclear manifold whose hyperfine line the conditional HHCP drives.
    pub hhcp_nuclear: NuclearState,
    pub hhcp_fidelity: f64,
    /// RF Rabi amplitude on the nucleus (MHz).
    pub rf_omega: f64,
    /// RF carrier for rabi/ramsey/echo modes (MHz).
    pub rf_carrier: f64,
    /// RF pulse length for spectroscopy; defaults to a π-pulse, 1/(2 rf_omega).
    pub rf_duration: Option<f64>,
    /// Phase modulation of the final π/2 (kHz).
    pub f_mod: f64,
    /// Constant phase (radians) added to the final π/2; π gives the phase-cycled partner trace.
    #[serde(default)]
    pub final_phase: f64,
    pub reset_toggle: bool,
}

impl Default for NeetrOptions {
    fn default() -> Self {
        Self {
            hhcp_nuclear: NuclearState::Down,
            hhcp_fidelity: 1.0,
            rf_omega: 0.05,
            rf_carrier: 0.0,
            rf_duration: None,
            f_mod: 0.0,
            final_phase: 0.0,
            reset_toggle: true,
        }
    }
}

fn rf_pulse(opts: &NeetrOptions, carrier: Param, phase: Param, duration: Param) -> Block {
    Block::Pulse {
        pulse: Pulse { target: Target::DefectNucleus, omega: [opts.rf_omega, 0.0, 0.0], carrier, phase, duration },
    }
}

/// Nuclear-electron-electron triple resonance: conditional HHCP in, RF block, conditional HHCP out.
///
/// Assumed order: init HHCP, optional reset π on the probe, RF block, readout HHCP, probe readout.
pub fn make_neetr(mode: NeetrMode, grid: &[f64], opts: &NeetrOptions) -> Result<PulseSequence> {
    if grid.is_empty() {
        return invalid("NEETR grid is empty");
    }
    if !(opts.rf_omega > 0.0) {
        return invalid("rf_omega must be positive");
    }
    if !opts.final_phase.is_finite() {
        return invalid("final_phase must be finite");
    }
    if mode != NeetrMode::Spectroscopy && !(opts.rf_carrier > 0.0) {
        return invalid(format!("{mode:?} mode needs a positive rf_carrier"));
    }
    if mode != NeetrMode::Spectroscopy && grid.iter().any(|v| *v < 0.0) {
        return invalid(format!("{mode:?} mode expects non-negative times in the grid"));
    }
    if mode == NeetrMode::Spectroscopy && grid.iter().any(|v| !(*v > 0.0)) {
        return invalid("spectroscopy mode expects positive frequencies in the grid");
    }
    let hhcp = Block::Hhcp {
        mode: HhcpMode::Conditional { nuclear: opts.hhcp_nuclear },
        fidelity: opts.hhcp_fidelity,
        omega_probe: 1.0,
        omega_defect: 1.0,
    };
    let t_pi = 0.5 / opts.rf_omega;
    let carrier = Param::Fixed(opts.rf_carrier);
    let zero = Param::Fixed(0.0);
    // φ = 2π f_mod τ with f_mod in kHz and τ in µs
    let mod_phase = Param::swept(2.0 * PI * opts.f_mod * 1e-3, opts.final_phase);
    let (rf_blocks, variable, decay) = match mode {
        NeetrMode::Spectroscopy => (
            vec![rf_pulse(opts, Param::swept(1.0, 0.0), zero, Param::Fixed(opts.rf_duration.unwrap_or(t_pi)))],
            SweepVariable::Frequency,
            None,
        ),
        NeetrMode::Rabi => (vec![rf_pulse(opts, carrier, zero, Param::swept(1.0, 0.0))], SweepVariable::RfDuration, None),
        NeetrMode::Ramsey => (
            vec![
                rf_pulse(opts, carrier, zero, Param::Fixed(t_pi / 2.0)),
                Block::Delay { duration: Param::swept(1.0, 0.0) },
                rf_pulse(opts, carrier, mod_phase, Param::Fixed(t_pi / 2.0)),
            ],
            SweepVariable::Tau,
            Some(DecayKind::Ramsey),
        ),
        NeetrMode::Echo => (
            vec![
                rf_pulse(opts, carrier, zero, Param::Fixed(t_pi / 2.0)),
                Block::Delay { duration: Param::swept(0.5, 0.0) },
                rf_pulse(opts, carrier, zero, Param::Fixed(t_pi)),
                Block::Delay { duration: Param::swept(0.5, 0.0) },
                rf_pulse(opts, carrier, mod_phase, Param::Fixed(t_pi / 2.0)),
            ],
            SweepVariable::Tau,
            Some(DecayKind::Echo),
        ),
    };
    let mut blocks = vec![hhcp.clone()];
    if opts.reset_toggle {
        blocks.push(Block::TogglePi);
    }
    blocks.extend(rf_blocks);
    blocks.push(hhcp);
    blocks.push(Block::Readout { observable: Observable::ProbeZ });
    let seq = PulseSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        name: format!("neetr-{}", format!("{mode:?}").to_lowercase()),
        blocks,
        sweep: Sweep { variable, grid: grid.to_vec() },
        phase_mod: if matches!(mode, NeetrMode::Ramsey | NeetrMode::Echo) { Some(opts.f_mod) } else { None },
        reset_toggle: opts.reset_toggle,
        decay,
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitOptions {
    pub hhcp_fidelity: f64,
    /// Electron–nuclear SWAP fidelity, applied as defect depolarization after each SWAP.
    pub swap_fidelity: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { hhcp_fidelity: 1.0, swap_fidelity: 1.0 }
    }
}

/// Full probe→electron iSWAP, then an electron–nuclear SWAP from two conditional π gates.
///
/// Ends with a nuclear-polarization readout. The sweep is a single point: nothing is swept.
pub fn make_nuclear_init(repetitions: usize, opts: &InitOptions) -> Result<PulseSequence> {
    if repetitions == 0 {
        return invalid("repetitions must be at least 1");
    }
    let mut blocks = Vec::new();
    for r in 0..repetitions {
        if r > 0 {
            blocks.push(Block::ProbeReset);
        }
        blocks.push(Block::Hhcp {
            mode: HhcpMode::Both,
            fidelity: opts.hhcp_fidelity,
            omega_probe: 1.0,
            omega_defect: 1.0,
        });
        blocks.push(Block::ElectronCondPi { control: NuclearState::Up });
        blocks.push(Block::NuclearCondPi { control: ElectronState::Down });
        if opts.swap_fidelity < 1.0 {
            blocks.push(Block::DefectDepolarize { fidelity: opts.swap_fidelity });
        }
    }
    blocks.push(Block::Readout { observable: Observable::NuclearPolarization });
    let seq = PulseSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        name: "nuclear-init".into(),
        blocks,
        sweep: Sweep { variable: SweepVariable::Phase, grid: vec![0.0] },
        phase_mod: None,
        reset_toggle: false,
        decay: None,
    };
    seq.validate()?;
    Ok(seq)
}

/// Two consecutive full HHCP swaps, probe → defect → probe, read on the probe.
pub fn make_hhcp_round_trip(fidelity: f64) -> Result<PulseSequence> {
    let h = Block::Hhcp { mode: HhcpMode::Both, fidelity, omega_probe: 1.0, omega_defect: 1.0 };
    let seq = PulseSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        name: "hhcp-round-trip".into(),
        blocks: vec![h.clone(), h, Block::Readout { observable: Observable::ProbeZ }],
        sweep: Sweep { variable: SweepVariable::Phase, grid: vec![0.0] },
        phase_mod: None,
        reset_toggle: false,
        decay: None,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_json_forms() {
        let p: Param = serde_json::from_str("2.5").unwrap();
        assert_eq!(p, Param::Fixed(2.5));
        let p: Param = serde_json::from_str(r#"{"sweep":{"scale":0.5}}"#).unwrap();
        assert_eq!(p.eval(4.0), 2.0);
    }

    #[test]
    fn builders_validate() {
        let o = DeerOptions::default();
        assert!(make_deer(0.0, &[1.0], &o).is_err());
        assert!(make_deer(1.0, &[], &o).is_err());
        let s = make_deer(7.0, &[1000.0, 1001.0], &o).unwrap();
        assert_eq!(s.blocks.len(), 5);
        assert!(make_nuclear_init(0, &InitOptions::default()).is_err());
        let n = make_nuclear_init(3, &InitOptions { hhcp_fidelity: 0.87, swap_fidelity: 0.85 }).unwrap();
        assert_eq!(n.blocks.iter().filter(|b| matches!(b, Block::ProbeReset)).count(), 2);
    }

    #[test]
    fn neetr_mode_grid_mismatch() {
        let o = NeetrOptions::default();
        assert!(make_neetr(NeetrMode::Rabi, &[1.0], &o).is_err());
        assert!(make_neetr(NeetrMode::Spectroscopy, &[-1.0], &o).is_err());
    }

    #[test]
    fn missing_readout_rejected() {
        let mut s = make_deer(7.0, &[1000.0], &DeerOptions::default()).unwrap();
        s.blocks.pop();
        assert!(s.validate().is_err());
    }
}
