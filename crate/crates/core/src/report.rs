//! CSV output with fixed-precision floats.
//!
//! Floats are written like C's `%.17g`: 17 significant digits, trailing zeros
//! dropped, which round-trips every `f64`. NaN is written as `nan`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Formats `x` with 17 significant digits in `%g` style.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn is_nan(&self) -> bool {
        matches!(self, Cell::Float(v) if v.is_nan())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub columns: &'static [&'static str],
}

pub mod schemas {
    use super::CsvSchema;

    pub const SPECTRA: CsvSchema = CsvSchema {
        columns: &["kind", "lambda_max", "method", "iterations", "residual"],
    };
    pub const TWIN: CsvSchema = CsvSchema {
        columns: &[
            "step",
            "branch",
            "delta_theta_l2",
            "lemma34_lhs",
            "lemma34_rhs",
            "lemma35_lhs",
            "lemma35_rhs",
            "envelope",
        ],
    };
    pub const INTERLACE: CsvSchema = CsvSchema {
        columns: &["filter", "node", "ego_size", "lambda_ego", "lambda_global", "ratio", "violation"],
    };
    pub const TRAIN: CsvSchema = CsvSchema { columns: &["epoch", "train_loss", "test_loss"] };
    pub const GAP: CsvSchema = CsvSchema {
        columns: &["epoch", "train_loss", "test_loss", "gap", "train_err01", "test_err01"],
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSummary {
    pub rows: usize,
    /// A NaN was written; callers treat this as a divergence marker.
    pub saw_nan: bool,
}

/// Writes the header and then every row; every row must match the schema's
/// arity.
pub fn write_csv<W: Write>(out: &mut W, schema: &CsvSchema, rows: &[Vec<Cell>]) -> Result<CsvSummary> {
    for (r, row) in rows.iter().enumerate() {
        if row.len() < schema.columns.len() {
            return Err(Error::Schema {
                column: schema.columns[row.len()].to_string(),
                message: format!("missing in row {r}"),
            });
        }
        if row.len() > schema.columns.len() {
            return Err(Error::Schema {
                column: format!("#{}", schema.columns.len() + 1),
                message: format!("row {r} has {} cells, schema has {}", row.len(), schema.columns.len()),
            });
        }
    }
    let io = |e| Error::io("<csv>", e);
    writeln!(out, "{}", schema.columns.join(",")).map_err(io)?;
    let mut saw_nan = false;
    for row in rows {
        saw_nan |= row.iter().any(Cell::is_nan);
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    Ok(CsvSummary { rows: rows.len(), saw_nan })
}

pub fn emit_csv(rows: &[Vec<Cell>], schema: &CsvSchema, path: &Path) -> Result<CsvSummary> {
    let mut buf = Vec::new();
    let summary = write_csv(&mut buf, schema, rows)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_f64(0.6), "0.59999999999999998");
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(-2.5), "-2.5");
        assert_eq!(fmt_f64(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_f64(1e20), "1e+20");
        assert_eq!(fmt_f64(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_f64(2.5e-4), "0.00025000000000000001");
        assert_eq!(fmt_f64(123456.0), "123456");
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    proptest! {
        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn header_only_when_empty() {
        let mut out = Vec::new();
        let s = write_csv(&mut out, &schemas::TRAIN, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,test_loss\n");
        assert_eq!(s.rows, 0);
    }

    #[test]
    fn schema_mismatch_names_the_column() {
        let mut out = Vec::new();
        let err = write_csv(&mut out, &schemas::TRAIN, &[vec![1usize.into(), 0.5.into()]]).unwrap_err();
        match err {
            Error::Schema { column, .. } => assert_eq!(column, "test_loss"),
            other => panic!("{other:?}"),
        }
        assert!(out.is_empty());
    }

    #[test]
    fn nan_is_flagged() {
        let mut out = Vec::new();
        let rows = vec![vec![1usize.into(), f64::NAN.into(), Cell::Empty]];
        let s = write_csv(&mut out, &schemas::TRAIN, &rows).unwrap();
        assert!(s.saw_nan);
        assert_eq!(String::from_utf8(out).unwrap().lines().nth(1), Some("1,nan,"));
    }
}
