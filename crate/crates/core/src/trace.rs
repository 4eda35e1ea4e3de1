//! Sampled signals with per-point uncertainty, and their CSV form.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XKind {
    Time,
    Frequency,
}

impl XKind {
    pub fn unit(self) -> &'static str {
        match self {
            XKind::Time => "us",
            XKind::Frequency => "MHz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub x_kind: XKind,
}

impl SignalTrace {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>, x_kind: XKind) -> Result<Self> {
        let t = Self { x, y, sigma, x_kind };
        t.validate()?;
        Ok(t)
    }

    pub fn noiseless(x: Vec<f64>, y: Vec<f64>, x_kind: XKind) -> Result<Self> {
        let n = x.len();
        Self::new(x, y, vec![0.0; n], x_kind)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.len() != self.sigma.len() {
            return invalid(format!(
                "trace columns differ in length (x {}, y {}, sigma {})",
                self.x.len(),
                self.y.len(),
                self.sigma.len()
            ));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return invalid("sigma must be non-negative");
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return invalid("trace contains non-finite values");
        }
        let inc = self.x.windows(2).all(|w| w[1] > w[0]);
        let dec = self.x.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return invalid("x must be strictly monotonic");
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let kind = match self.x_kind {
            XKind::Time => "time",
            XKind::Frequency => "frequency",
        };
        let _ = writeln!(out, "# x_kind={kind}, x_unit={}", self.x_kind.unit());
        out.push_str("x,y,sigma\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{:.12e},{:.12e},{:.12e}", self.x[i], self.y[i], self.sigma[i]);
        }
        out
    }

    /// Parse the CSV form. Rows are 1-based file lines in errors.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse { row: 1, msg: "empty file".into() })?;
        let x_kind = parse_header_comment(first)?;
        let (hrow, header) = lines.next().ok_or(Error::Parse { row: 2, msg: "missing column header".into() })?;
        let cols: Vec<String> = header.split(',').map(|s| s.trim().to_ascii_lowercase()).collect();
        if cols != ["x", "y", "sigma"] {
            return Err(Error::Parse { row: hrow + 1, msg: format!("expected header 'x,y,sigma', got '{header}'") });
        }
        let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines {
            let row = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse { row, msg: format!("expected 3 fields, got {}", fields.len()) });
            }
            let parse = |f: &str, name: &str| -> Result<f64> {
                let v: f64 = f.parse().map_err(|_| Error::Parse { row, msg: format!("{name} '{f}' is not a number") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, msg: format!("{name} is not finite") });
                }
                Ok(v)
            };
            x.push(parse(fields[0], "x")?);
            y.push(parse(fields[1], "y")?);
            let sv = parse(fields[2], "sigma")?;
            if sv < 0.0 {
                return Err(Error::Parse { row, msg: "sigma is negative".into() });
            }
            s.push(sv);
            if x.len() >= 2 && x[x.len() - 1] == x[x.len() - 2] {
                return Err(Error::Parse { row, msg: "x is not strictly monotonic".into() });
            }
        }
        Self::new(x, y, s, x_kind)
    }
}

fn parse_header_comment(line: &str) -> Result<XKind> {
    let err = |msg: String| Error::Parse { row: 1, msg };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| err("first line must be '# x_kind=..., x_unit=...'".into()))?;
    let mut kind = None;
    let mut unit = None;
    for part in body.split(',') {
        let mut kv = part.splitn(2, '=');
        let k = kv.next().unwrap_or("").trim();
        let v = kv.next().unwrap_or("").trim();
        match k {
            "x_kind" => kind = Some(v.to_string()),
            "x_unit" => unit = Some(v.to_string()),
            _ => {}
        }
    }
    let kind = match kind.as_deref() {
        Some("time") => XKind::Time,
        Some("frequency") => XKind::Frequency,
        other => return Err(err(format!("unknown x_kind {other:?}"))),
    };
    match unit.as_deref() {
        Some(u) if u == kind.unit() => Ok(kind),
        other => Err(err(format!("x_unit {other:?} does not match x_kind (expected {})", kind.unit()))),
    }
}
