//! Plain-text output: CSV tables with full-precision numbers and pretty JSON.
//!
//! Numbers are written with `{:.16e}` so that files round-trip exactly and
//! identical computations produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
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

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

fn push_cell(out: &mut String, cell: &Cell) {
    match cell {
        Cell::Num(v) => {
            let _ = write!(out, "{v:.16e}");
        }
        Cell::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Cell::Text(s) => out.push_str(s),
    }
}

/// Renders a CSV table. Header lines starting with `#` may precede the
/// column names (used for the seed).
pub fn csv_string(comments: &[String], columns: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_cell(&mut out, cell);
        }
        out.push('\n');
    }
    out
}

/// Writes a CSV table, creating parent directories.
pub fn write_csv(path: &Path, comments: &[String], columns: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, csv_string(comments, columns, rows))?;
    Ok(())
}

/// Writes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        let x = 0.1 + 0.2;
        let s = csv_string(&["seed = 7".into()], &["n", "x", "kind"], &[vec![3i64.into(), x.into(), "atomic".into()]]);
        assert!(s.starts_with("# seed = 7\nn,x,kind\n3,"));
        let field = s.lines().nth(2).unwrap().split(',').nth(1).unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), x);
    }
}
