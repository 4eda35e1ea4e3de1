//! Static reference tables: computed defect hyperfine tensors and nuclear gyromagnetic ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFECT_DB_FILE: &str = "defects_dft.csv";
pub const ISOTOPE_FILE: &str = "isotopes.csv";

const DEFAULT_DEFECT_DB: &str = include_str!("../../data/defects_dft.csv");
const DEFAULT_ISOTOPES: &str = include_str!("../../data/isotopes.csv");

const DB_COLUMNS: [&str; 14] = [
    "type", "n_vacancy", "defect", "a1", "theta1", "phi1", "a2", "theta2", "phi2", "a3", "theta3", "phi3", "functional",
    "label",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub label: String,
    /// Defect family, e.g. "H-interstitial".
    pub structure: String,
    pub defect: String,
    pub n_vacancy: u32,
    /// Principal values A₁, A₂, A₃ in MHz.
    pub a: [f64; 3],
    /// Principal directions (θ, φ) in degrees.
    pub dirs: [(f64, f64); 3],
    pub functional: String,
}

impl DefectRecord {
    /// ⟨A⊥⟩ = (A₁ + A₂)/2.
    pub fn a_perp(&self) -> f64 {
        0.5 * (self.a[0] + self.a[1])
    }

    /// A∥ = A₃.
    pub fn a_par(&self) -> f64 {
        self.a[2]
    }
}

/// Data lines of a CSV with `#` comments and blank lines skipped, keeping 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn num(row: usize, field: &str, name: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::Parse { row, msg: format!("{name} '{field}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, msg: format!("{name} is not finite") });
    }
    Ok(v)
}

fn angle(row: usize, field: &str, name: &str, lo: f64, hi: f64) -> Result<f64> {
    let v = num(row, field, name)?;
    if v < lo || v > hi {
        return Err(Error::Parse { row, msg: format!("{name} = {v} outside [{lo}, {hi}] degrees") });
    }
    Ok(v)
}

pub fn parse_defect_db(text: &str) -> Result<Vec<DefectRecord>> {
    let mut lines = data_lines(text);
    let (hrow, header) = lines.next().ok_or(Error::Parse { row: 1, msg: "empty defect database".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != DB_COLUMNS {
        return Err(Error::Parse { row: hrow, msg: format!("expected header '{}'", DB_COLUMNS.join(",")) });
    }
    let mut out = Vec::new();
    for (row, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != DB_COLUMNS.len() {
            return Err(Error::Parse { row, msg: format!("expected {} fields, got {}", DB_COLUMNS.len(), f.len()) });
        }
        let n_vacancy: u32 =
            f[1].parse().map_err(|_| Error::Parse { row, msg: format!("n_vacancy '{}' is not a count", f[1]) })?;
        let mut a = [0.0; 3];
        let mut dirs = [(0.0, 0.0); 3];
        for k in 0..3 {
            a[k] = num(row, f[3 + 3 * k], &format!("a{}", k + 1))?;
            dirs[k] = (
                angle(row, f[4 + 3 * k], &format!("theta{}", k + 1), 0.0, 180.0)?,
                angle(row, f[5 + 3 * k], &format!("phi{}", k + 1), -180.0, 180.0)?,
            );
        }
        let label = if f[13].is_empty() { format!("{} {}V {}", f[0], n_vacancy, f[2]) } else { f[13].to_string() };
        out.push(DefectRecord {
            label,
            structure: f[0].to_string(),
            defect: f[2].to_string(),
            n_vacancy,
            a,
            dirs,
            functional: f[12].to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Parse { row: hrow, msg: "defect database has no records".into() });
    }
    Ok(out)
}

/// The shipped computed-defect table.
pub fn default_defect_db() -> Vec<DefectRecord> {
    parse_defect_db(DEFAULT_DEFECT_DB).expect("shipped defect table parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isotope {
    pub symbol: String,
    /// γ/2π in MHz/T, signed.
    pub gamma: f64,
}

pub fn parse_isotopes(text: &str) -> Result<Vec<Isotope>> {
    let mut lines = data_lines(text);
    let (hrow, header) = lines.next().ok_or(Error::Parse { row: 1, msg: "empty isotope table".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["isotope", "gamma_mhz_per_t"] {
        return Err(Error::Parse { row: hrow, msg: "expected header 'isotope,gamma_mhz_per_t'".into() });
    }
    let mut out = Vec::new();
    for (row, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 2 || f[0].is_empty() {
            return Err(Error::Parse { row, msg: "expected 'isotope,gamma_mhz_per_t'".into() });
        }
        out.push(Isotope { symbol: f[0].to_string(), gamma: num(row, f[1], "gamma_mhz_per_t")? });
    }
    Ok(out)
}

pub fn default_isotopes() -> Vec<Isotope> {
    parse_isotopes(DEFAULT_ISOTOPES).expect("shipped isotope table parses")
}

pub fn defect_db_to_csv(db: &[DefectRecord]) -> String {
    let mut out = format!("{}\n", DB_COLUMNS.join(","));
    for r in db {
        out.push_str(&format!("{},{},{}", r.structure, r.n_vacancy, r.defect));
        for k in 0..3 {
            out.push_str(&format!(",{},{},{}", r.a[k], r.dirs[k].0, r.dirs[k].1));
        }
        out.push_str(&format!(",{},{}\n", r.functional, r.label));
    }
    out
}
