//! CSV and manifest output. All files are UTF-8, comma-delimited with a
//! header row; floats are printed with 12 significant digits so re-runs
//! are byte-comparable.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::measure::{EmpiricalMeasure, TailCurve};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed csv at line {line}")]
    Csv { path: String, line: usize },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Format with 12 significant digits, fixed point for moderate exponents,
/// scientific otherwise, trailing zeros trimmed (the `%.12g` convention).
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let epos = sci.find('e').expect("scientific format");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let mut s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        s
    } else {
        let mut mantissa = sci[..epos].to_string();
        if mantissa.contains('.') {
            while mantissa.ends_with('0') {
                mantissa.pop();
            }
            if mantissa.ends_with('.') {
                mantissa.pop();
            }
        }
        format!("{mantissa}e{exp}")
    }
}

/// Compact value for embedding in file names (same digits, `.` kept).
pub fn fmt_time_label(t: f64) -> String {
    fmt_g(t)
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_g(*v));
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

/// Single-column sorted sample file.
pub fn write_measure_csv(path: &Path, measure: &EmpiricalMeasure) -> Result<(), IoError> {
    let mut out = String::with_capacity(measure.len() * 16 + 2);
    out.push_str("x\n");
    for &s in measure.samples() {
        out.push_str(&fmt_g(s));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

/// Read a tail curve from a CSV with `x` and `v` in the first two columns
/// (as written by the solver's profile files).
pub fn read_tail_csv(path: &Path) -> Result<TailCurve, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue; // header
        }
        let mut fields = line.split(',');
        let bad = || IoError::Csv {
            path: path.display().to_string(),
            line: i + 1,
        };
        let x: f64 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let v: f64 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        xs.push(x);
        vs.push(v);
    }
    TailCurve::new(xs, vs).map_err(|_| IoError::Csv {
        path: path.display().to_string(),
        line: 0,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| file_err(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| file_err(path, e))
}

/// Append one line to an open buffer writer (used by the report emitter).
pub fn writeln_into(w: &mut impl Write, path: &Path, line: &str) -> Result<(), IoError> {
    writeln!(w, "{line}").map_err(|e| file_err(path, e))
}
