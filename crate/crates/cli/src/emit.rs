//! Table emission (CSV and JSON) and the observation-file reader.
//!
//! Every float cell is printed with `{:.16e}`: 17 significant digits, enough
//! to round-trip an `f64` exactly, so a repeated run produces byte-identical
//! files.

use factor_core::{Assignment, FactorError, Result, Scope};

/// Output format for tabular results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn tag(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    pub fn from_tag(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(FactorError::ConfigInvalid(format!(
                "unknown format `{other}` (expected csv or json)"
            ))),
        }
    }
}

/// Formats one float cell. Shared by every emitter so files stay byte-stable.
pub fn float_cell(x: f64) -> String {
    format!("{x:.16e}")
}

/// A rectangular block of pre-formatted cells under a header row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_bytes(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out.into_bytes()
    }

    /// Records as a JSON array of objects. Cells are numeric literals and are
    /// embedded unquoted.
    fn to_json(&self) -> Vec<u8> {
        let mut out = String::from("[\n");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str("  {");
            for (j, (key, cell)) in self.header.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                out.push('"');
                out.push_str(&escape_json(key));
                out.push_str("\": ");
                out.push_str(cell);
            }
            out.push('}');
            if i + 1 < self.rows.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("]\n");
        out.into_bytes()
    }
}

fn escape_json(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            c => vec![c],
        })
        .collect()
}

/// Reads per-step observations from CSV text. The header must contain one
/// column per observed variable; any extra columns (`t`, the `*_true` truth
/// columns written by `simulate`, ...) are ignored, so simulated data can be
/// fed straight back into `filter`.
pub fn read_observations(text: &str, obs: &Scope) -> Result<Vec<Assignment>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| FactorError::ParseError {
        line: 1,
        column: 1,
        message: "data file is empty".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();

    let mut cols = Vec::with_capacity(obs.len());
    for v in obs.iter() {
        let idx = names.iter().position(|n| *n == v.name()).ok_or_else(|| {
            FactorError::ConfigInvalid(format!(
                "data file has no column `{}` (columns: {})",
                v.name(),
                names.join(", ")
            ))
        })?;
        cols.push(idx);
    }

    let mut steps = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut a = Assignment::new();
        for (v, &ci) in obs.iter().zip(&cols) {
            let cell = *cells.get(ci).ok_or_else(|| FactorError::ParseError {
                line: lineno + 1,
                column: 1,
                message: format!("row has {} columns, header has {}", cells.len(), names.len()),
            })?;
            if v.is_discrete() {
                let k: usize = cell.parse().map_err(|_| parse_cell(lineno, ci, cell, "an index"))?;
                a = a.with(v.name(), k);
            } else {
                let x: f64 = cell.parse().map_err(|_| parse_cell(lineno, ci, cell, "a number"))?;
                a = a.with(v.name(), x);
            }
        }
        steps.push(a);
    }
    if steps.is_empty() {
        return Err(FactorError::ConfigInvalid(
            "data file has a header but no observation rows".into(),
        ));
    }
    Ok(steps)
}

fn parse_cell(lineno: usize, col: usize, cell: &str, expected: &str) -> FactorError {
    FactorError::ParseError {
        line: lineno + 1,
        column: col + 1,
        message: format!("cell `{cell}` is not {expected}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use factor_core::{Value, Variable};

    fn scope() -> Scope {
        Scope::new([Variable::continuous("y1"), Variable::continuous("y2")]).unwrap()
    }

    #[test]
    fn float_cells_round_trip_exactly() {
        for &x in &[0.1, -3.5e-7, 1.0 / 3.0, 12345.678901234567] {
            let back: f64 = float_cell(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn reader_picks_named_columns_and_ignores_the_rest() {
        let text = "t,s_true,y2,y1\n1,0,2.5,-1.0\n2,3,0.25,4.0\n";
        let obs = read_observations(text, &scope()).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].get("y1"), Some(Value::Real(-1.0)));
        assert_eq!(obs[0].get("y2"), Some(Value::Real(2.5)));
        assert_eq!(obs[1].get("y1"), Some(Value::Real(4.0)));
    }

    #[test]
    fn missing_column_is_an_input_error() {
        let err = read_observations("t,y1\n1,0.5\n", &scope()).unwrap_err();
        assert_eq!(err.code(), "ConfigInvalid");
        assert!(err.to_string().contains("y2"));
    }

    #[test]
    fn bad_cell_reports_its_position() {
        let err = read_observations("y1,y2\n0.5,oops\n", &scope()).unwrap_err();
        match err {
            FactorError::ParseError { line, column, .. } => {
                assert_eq!((line, column), (2, 2));
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn json_emission_quotes_keys_only() {
        let t = Table {
            header: vec!["t".into(), "mean_f1".into()],
            rows: vec![vec!["1".into(), float_cell(0.5)]],
        };
        let text = String::from_utf8(t.to_bytes(Format::Json)).unwrap();
        assert!(text.contains("\"mean_f1\": 5.0000000000000000e-1"));
    }
}
