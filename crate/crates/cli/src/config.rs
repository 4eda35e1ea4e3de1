//! Run configurations. Every file reference can also be given inline, and the manifest of a run
//! stores the fully inlined config so the run can be repeated from the manifest alone.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use spinid_core::analysis::{Background, Baseline, Envelope};
use spinid_core::estimation::residual::ResidualOptions;
use spinid_core::estimation::{DefectRecord, IdentifyOptions, Isotope, MeasurementSet};
use spinid_core::propagator::{DecoherenceParams, RegisterOptions};
use spinid_core::sequences::{
    make_deer, make_hhcp_round_trip, make_neetr, make_nuclear_init, make_zf_deer, DeerOptions, InitOptions,
    NeetrMode, NeetrOptions, PulseSequence, ZfDeerMode,
};
use spinid_core::spin_model::SpinSystem;
use spinid_core::trace::SignalTrace;

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "SPINID_DATA_DIR";

fn schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

/// Either a file reference or the content itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    File { file: PathBuf },
    Inline(T),
}

/// Sweep grid: an explicit list or `n` evenly spaced points from `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Points(Vec<f64>),
    Linspace { start: f64, stop: f64, n: usize },
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match self {
            Grid::Points(p) => p.clone(),
            Grid::Linspace { start, stop, n } => match n {
                0 => Vec::new(),
                1 => vec![*start],
                _ => (0..*n).map(|i| start + (stop - start) * i as f64 / (*n - 1) as f64).collect(),
            },
        };
        if pts.is_empty() {
            return Err(CliError::validation("empty sweep: the grid has no points"));
        }
        if pts.iter().any(|v| !v.is_finite()) {
            return Err(CliError::validation("sweep grid contains a non-finite value"));
        }
        Ok(pts)
    }
}

/// How the pulse program is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "builder")]
pub enum SequenceSpec {
    /// A sequence JSON document, from a file or inline.
    Program { program: Source<PulseSequence> },
    Deer {
        tau: f64,
        freqs: Grid,
        #[serde(default)]
        options: DeerOptions,
    },
    ZfDeerFrequency {
        tau: f64,
        freqs: Grid,
        #[serde(default)]
        options: DeerOptions,
    },
    ZfDeerTime {
        carrier: f64,
        taus: Grid,
        #[serde(default)]
        options: DeerOptions,
    },
    Neetr {
        mode: NeetrMode,
        grid: Grid,
        #[serde(default)]
        options: NeetrOptions,
    },
    NuclearInit {
        repetitions: usize,
        #[serde(default)]
        options: InitOptions,
    },
    HhcpRoundTrip { fidelity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of additive Gaussian noise, in signal units.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    /// One defect, or several seen by the same probe.
    pub systems: Vec<Source<SpinSystem>>,
    /// Field along the probe axis in gauss; 0 selects zero field.
    pub b0: f64,
    pub sequence: SequenceSpec,
    /// Replaces the sweep grid of the sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Grid>,
    #[serde(default)]
    pub decoherence: DecoherenceParams,
    #[serde(default)]
    pub register: RegisterOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum FitModel {
    Lorentzian {
        n_peaks: usize,
    },
    DecayingCosine {
        #[serde(default = "free_t")]
        envelope: Envelope,
        #[serde(default = "no_baseline")]
        baseline: Baseline,
        #[serde(default)]
        freq_guess: Option<f64>,
    },
    Exponential,
    /// Power spectrum of the trace; the report carries the dominant frequency.
    Psd {
        #[serde(default)]
        background: Background,
    },
}

fn free_t() -> Envelope {
    Envelope::FreeT
}

fn no_baseline() -> Baseline {
    Baseline::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub trace: Source<SignalTrace>,
    /// Phase-cycled partner trace; the fit runs on `trace − partner`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<Source<SignalTrace>>,
    /// T1e relaxation trace. Its exponential fit fixes T1e in a decaying-cosine envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1e_trace: Option<Source<SignalTrace>>,
    pub model: FitModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub measurement: Source<MeasurementSet>,
    /// Defect table; `defect_db.csv` in the data directory, else the built-in table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_db: Option<Source<Vec<DefectRecord>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isotopes: Option<Source<Vec<Isotope>>>,
    #[serde(default)]
    pub options: IdentifyOptions,
    /// Also write the full ε(θ, φ) grid as CSV.
    #[serde(default)]
    pub dump_map: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub measurement: Source<MeasurementSet>,
    pub a_par: f64,
    pub a_perp: f64,
    /// Nuclear γ in MHz/T.
    pub gamma_n: f64,
    #[serde(default)]
    pub options: ResidualOptions,
}

/// Resolves relative paths against the config's directory, then the data directory.
pub struct Resolver {
    base: Option<PathBuf>,
    data_dir: Option<PathBuf>,
}

impl Resolver {
    pub fn new(config_path: Option<&Path>) -> Self {
        Self {
            base: config_path.and_then(|p| p.parent()).map(Path::to_path_buf),
            data_dir: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from),
        }
    }

    pub fn locate(&self, p: &Path) -> Result<PathBuf> {
        if p.is_absolute() {
            return Ok(p.to_path_buf());
        }
        let candidates = [self.base.as_ref().map(|b| b.join(p)), self.data_dir.as_ref().map(|d| d.join(p))];
        candidates
            .into_iter()
            .flatten()
            .find(|c| c.exists())
            .or_else(|| Some(p.to_path_buf()).filter(|c| c.exists()))
            .ok_or_else(|| CliError::validation(format!("referenced file {} not found", p.display())))
    }

    pub fn read(&self, p: &Path) -> Result<String> {
        let path = self.locate(p)?;
        std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    /// A file named `name` in the data directory, if present.
    pub fn data_file(&self, name: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists())
    }
}

/// Parse a config file, accepting either a bare config or a run manifest of the same command.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
    let value = match (value.get("command"), value.get("config")) {
        (Some(cmd), Some(cfg)) => {
            if cmd.as_str() != Some(command) {
                return Err(CliError::validation(format!("manifest was written by '{cmd}', not '{command}'")));
            }
            cfg.clone()
        }
        _ => value,
    };
    if let Some(v) = value.get("schema_version") {
        if v.as_u64() != Some(CONFIG_SCHEMA_VERSION as u64) {
            return Err(CliError::validation(format!(
                "config schema_version {v} unsupported (expected {CONFIG_SCHEMA_VERSION})"
            )));
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::json(path, e))
}

impl<T: Clone> Source<T> {
    /// Load the content, parsing files with `parse`, and return it with an inlined copy of `self`.
    pub fn resolve(&self, r: &Resolver, parse: impl Fn(&str) -> Result<T>) -> Result<(T, Source<T>)> {
        let v = match self {
            Source::Inline(v) => v.clone(),
            Source::File { file } => parse(&r.read(file)?).map_err(|e| e.context(file))?,
        };
        Ok((v.clone(), Source::Inline(v)))
    }
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::validation(e.to_string()))
}

impl SequenceSpec {
    pub fn build(&self, r: &Resolver) -> Result<(PulseSequence, SequenceSpec)> {
        let seq = match self {
            SequenceSpec::Program { program } => {
                let (seq, inline) = program.resolve(r, |t| Ok(PulseSequence::from_json(t)?))?;
                seq.validate()?;
                return Ok((seq, SequenceSpec::Program { program: inline }));
            }
            SequenceSpec::Deer { tau, freqs, options } => make_deer(*tau, &freqs.points()?, options)?,
            SequenceSpec::ZfDeerFrequency { tau, freqs, options } => {
                make_zf_deer(&ZfDeerMode::FrequencySweep { tau: *tau, freqs: freqs.points()? }, options)?
            }
            SequenceSpec::ZfDeerTime { carrier, taus, options } => {
                make_zf_deer(&ZfDeerMode::TimeSweep { carrier: *carrier, taus: taus.points()? }, options)?
            }
            SequenceSpec::Neetr { mode, grid, options } => make_neetr(*mode, &grid.points()?, options)?,
            SequenceSpec::NuclearInit { repetitions, options } => make_nuclear_init(*repetitions, options)?,
            SequenceSpec::HhcpRoundTrip { fidelity } => make_hhcp_round_trip(*fidelity)?,
        };
        Ok((seq, self.clone()))
    }
}

/// Overrides shared by the residual-scanning commands.
pub fn apply_grid(opts: &mut ResidualOptions, grid_deg: Option<f64>) {
    if let Some(g) = grid_deg {
        opts.grid_deg = g;
    }
}
