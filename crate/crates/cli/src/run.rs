use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spinid_core::analysis::psd::dominant_frequency;
use spinid_core::analysis::{
    fft_psd, fit_decaying_cosine, fit_exponential, fit_lorentzian, Background, CosineOptions, Envelope, FitResult,
    NO_DECAY_FLAG,
};
use spinid_core::estimation::residual::{residual_map, ResidualMap, ResidualProblem};
use spinid_core::estimation::db::{defect_db_to_csv, parse_defect_db, parse_isotopes};
use spinid_core::estimation::{default_defect_db, default_isotopes, identify, DefectRecord, MeasurementSet};
use spinid_core::propagator::{run_sequence, run_sequence_multi};
use spinid_core::trace::SignalTrace;

use crate::config::*;
use crate::error::{exit, CliError, Result};

/// Files produced by a command, written together with the manifest.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize)]
struct OutputEntry<'a> {
    file: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    tool: Tool,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    config: &'a C,
    outputs: Vec<OutputEntry<'a>>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }

    /// Write every file, then `manifest.json` embedding the inlined config and output digests.
    pub fn finish<C: Serialize>(self, command: &str, config: &C, seed: Option<u64>) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let mut entries = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            entries.push(OutputEntry { file: name, bytes: bytes.len(), sha256: format!("{:x}", Sha256::digest(bytes)) });
        }
        let manifest = Manifest {
            command,
            tool: Tool { name: "spinid", version: env!("CARGO_PKG_VERSION") },
            seed,
            config,
            outputs: entries,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn read_trace(src: &Source<SignalTrace>, r: &Resolver) -> Result<(SignalTrace, Source<SignalTrace>)> {
    src.resolve(r, |t| Ok(SignalTrace::from_csv(t)?))
}

fn read_measurement(src: &Source<MeasurementSet>, r: &Resolver) -> Result<(MeasurementSet, Source<MeasurementSet>)> {
    let (m, inline) = src.resolve(r, |t| Ok(MeasurementSet::from_json(t)?))?;
    m.validate()?;
    Ok((m, inline))
}

pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<i32> {
    let mut cfg: SimulateConfig = load_config(config_path, "simulate")?;
    let r = Resolver::new(Some(config_path));
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.systems.is_empty() {
        return Err(CliError::validation("systems must list at least one spin system"));
    }
    let mut systems = Vec::new();
    let mut inline_systems = Vec::new();
    for s in &cfg.systems {
        let (sys, inline) = s.resolve(&r, parse_json)?;
        sys.validate()?;
        systems.push(sys);
        inline_systems.push(inline);
    }
    let (mut seq, inline_seq) = cfg.sequence.build(&r)?;
    if let Some(g) = &cfg.sweep {
        seq.sweep.grid = g.points()?;
        seq.validate()?;
    }
    if seq.sweep.grid.is_empty() {
        return Err(CliError::validation("empty sweep: the sequence has no sweep points"));
    }
    let mut trace = if systems.len() == 1 {
        run_sequence(&seq, &systems[0], cfg.b0, &cfg.decoherence, cfg.register)?
    } else {
        run_sequence_multi(&seq, &systems, cfg.b0, &cfg.decoherence, cfg.register)?
    };
    if let Some(noise) = &cfg.noise {
        let normal = Normal::new(0.0, noise.sigma)
            .map_err(|_| CliError::validation(format!("noise sigma must be finite and non-negative, got {}", noise.sigma)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (y, s) in trace.y.iter_mut().zip(trace.sigma.iter_mut()) {
            *y += normal.sample(&mut rng);
            *s = noise.sigma;
        }
    }
    cfg.systems = inline_systems;
    cfg.sequence = inline_seq;
    let mut outs = Outputs::new(out);
    outs.add("trace.csv", trace.to_csv());
    outs.add("sequence.json", format!("{}\n", seq.to_json()));
    let seed = cfg.seed;
    outs.finish("simulate", &cfg, Some(seed))?;
    Ok(exit::OK)
}

#[derive(Serialize)]
struct FitReport {
    fit: FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    t1e_fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dominant_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

fn difference(a: &SignalTrace, b: &SignalTrace) -> Result<SignalTrace> {
    if a.x != b.x || a.x_kind != b.x_kind {
        return Err(CliError::validation("partner trace must share the x grid of the trace"));
    }
    let y = a.y.iter().zip(&b.y).map(|(u, v)| u - v).collect();
    let s = a.sigma.iter().zip(&b.sigma).map(|(u, v)| u.hypot(*v)).collect();
    Ok(SignalTrace::new(a.x.clone(), y, s, a.x_kind)?)
}

pub fn fit(config_path: &Path, out: &Path) -> Result<i32> {
    let mut cfg: FitConfig = load_config(config_path, "fit")?;
    let r = Resolver::new(Some(config_path));
    let (mut trace, inline) = read_trace(&cfg.trace, &r)?;
    cfg.trace = inline;
    if let Some(p) = &cfg.partner {
        let (partner, inline) = read_trace(p, &r)?;
        trace = difference(&trace, &partner)?;
        cfg.partner = Some(inline);
    }
    let mut notes = Vec::new();
    let mut t1e_fit = None;
    if let Some(src) = &cfg.t1e_trace {
        if !matches!(cfg.model, FitModel::DecayingCosine { .. }) {
            return Err(CliError::validation("t1e_trace only applies to the decaying-cosine model"));
        }
        let (t1e_trace, inline) = read_trace(src, &r)?;
        cfg.t1e_trace = Some(inline);
        t1e_fit = Some(fit_exponential(&t1e_trace)?);
    }
    let mut outs = Outputs::new(out);
    let mut dominant = None;
    let fit = match &cfg.model {
        FitModel::Lorentzian { n_peaks } => fit_lorentzian(&trace, *n_peaks, None)?,
        FitModel::Exponential => fit_exponential(&trace)?,
        FitModel::DecayingCosine { envelope, baseline, freq_guess } => {
            let mut envelope = *envelope;
            if let Some(t1) = &t1e_fit {
                if matches!(envelope, Envelope::Stretched) {
                    return Err(CliError::validation("a T1e trace cannot be combined with the stretched envelope"));
                }
                let t1e = t1.value("T")?;
                if t1.flags.iter().any(|f| f == NO_DECAY_FLAG) || !t1e.is_finite() {
                    notes.push("T1e trace shows no decay; the envelope rate is attributed to T2 alone".into());
                    envelope = Envelope::FreeT;
                } else {
                    envelope = Envelope::FixedT1e { t1e };
                }
            }
            fit_decaying_cosine(&trace, CosineOptions { envelope, baseline: *baseline, freq_guess: *freq_guess })?
        }
        FitModel::Psd { background } => {
            let psd = fft_psd(&trace, *background)?;
            outs.add("psd.csv", psd.to_csv());
            let f = dominant_frequency(&trace.x, &trace.y, *background == Background::LinearSubtract)?;
            dominant = Some(f);
            FitResult {
                model: "psd".into(),
                params: Vec::new(),
                covariance: Vec::new(),
                residual_norm: 0.0,
                iterations: 0,
                hwhm: None,
                flags: Vec::new(),
            }
        }
    };
    outs.add("fit.json", pretty(&FitReport { fit, t1e_fit, dominant_frequency: dominant, notes }));
    outs.finish("fit", &cfg, None)?;
    Ok(exit::OK)
}

fn map_csv(map: &ResidualMap) -> String {
    let mut s = String::from("theta_deg,phi_deg,eps\n");
    for (i, th) in map.theta.iter().enumerate() {
        for (j, ph) in map.phi.iter().enumerate() {
            let _ = writeln!(s, "{th},{ph},{:.12e}", map.eps[i][j]);
        }
    }
    s
}

/// Defect table from the config, else `defect_db.csv` in the data directory, else built-in.
fn load_db(src: Option<&Source<Vec<DefectRecord>>>, r: &Resolver) -> Result<Vec<DefectRecord>> {
    match src {
        Some(s) => Ok(s.resolve(r, |t| Ok(parse_defect_db(t)?))?.0),
        None => match r.data_file("defect_db.csv") {
            Some(p) => Ok(parse_defect_db(&r.read(&p)?).map_err(|e| CliError::from(e).context(&p))?),
            None => Ok(default_defect_db()),
        },
    }
}

pub fn identify_cmd(config_path: &Path, out: &Path, grid_deg: Option<f64>) -> Result<i32> {
    let mut cfg: IdentifyConfig = load_config(config_path, "identify")?;
    let r = Resolver::new(Some(config_path));
    apply_grid(&mut cfg.options.residual, grid_deg);
    let (meas, inline) = read_measurement(&cfg.measurement, &r)?;
    cfg.measurement = inline;
    let db = load_db(cfg.defect_db.as_ref(), &r)?;
    let isotopes = match &cfg.isotopes {
        Some(s) => s.resolve(&r, |t| Ok(parse_isotopes(t)?))?.0,
        None => match r.data_file("isotopes.csv") {
            Some(p) => parse_isotopes(&r.read(&p)?).map_err(|e| CliError::from(e).context(&p))?,
            None => default_isotopes(),
        },
    };
    cfg.defect_db = Some(Source::Inline(db.clone()));
    cfg.isotopes = Some(Source::Inline(isotopes.clone()));
    let (report, map) = identify(&meas, &db, &isotopes, &cfg.options)?;
    let mut outs = Outputs::new(out);
    outs.add("report.json", pretty(&report));
    if cfg.dump_map {
        outs.add("residual_map.csv", map_csv(&map));
    }
    outs.finish("identify", &cfg, None)?;
    if !report.consistent {
        eprintln!(
            "inconsistent measurement set: residual minimum {:.4} exceeds {}",
            report.residual_min.value, cfg.options.max_eps
        );
        return Ok(exit::INCONSISTENT);
    }
    Ok(exit::OK)
}

pub fn scan_residual(config_path: &Path, out: &Path, grid_deg: Option<f64>) -> Result<i32> {
    let mut cfg: ScanConfig = load_config(config_path, "scan-residual")?;
    let r = Resolver::new(Some(config_path));
    apply_grid(&mut cfg.options, grid_deg);
    let (meas, inline) = read_measurement(&cfg.measurement, &r)?;
    cfg.measurement = inline;
    let problem = ResidualProblem::new(&meas, cfg.a_par, cfg.a_perp, cfg.gamma_n, meas.probe_axis, cfg.options.weighted)?;
    let map = residual_map(&problem, &cfg.options)?;
    let summary = serde_json::json!({
        "grid_min": map.grid_min,
        "min": map.min,
        "abs_residual": map.abs_residual,
        "argmin": map.argmin,
        "weighted": map.weighted,
    });
    let mut outs = Outputs::new(out);
    outs.add("residual_map.csv", map_csv(&map));
    outs.add("scan.json", pretty(&summary));
    outs.finish("scan-residual", &cfg, None)?;
    Ok(exit::OK)
}

pub fn defect_db_list(db: Option<&Path>, out: Option<&Path>) -> Result<i32> {
    let r = Resolver::new(None);
    let src = db.map(|p| Source::File { file: p.to_path_buf() });
    let table = load_db(src.as_ref(), &r)?;
    let csv = defect_db_to_csv(&table);
    match out {
        Some(p) => std::fs::write(p, csv).map_err(|e| CliError::io(p, e))?,
        None => print!("{csv}"),
    }
    Ok(exit::OK)
}
