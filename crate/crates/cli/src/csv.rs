//! CSV emission: comma separated, header row, floats with 17 significant digits.

use rwpin::analysis::StatReport;
use std::fmt::Write as _;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::I(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn format_cell(c: &Cell) -> String {
    match c {
        Cell::F(x) => format_f64(*x),
        Cell::I(n) => n.to_string(),
        Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::S(s) => s.clone(),
        Cell::Empty => String::new(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    /// Long format `param…, statistic, value, stderr, n`; parameter columns
    /// appear in order of first use across `reports`.
    pub fn from_reports(reports: &[&StatReport]) -> Self {
        let mut params: Vec<String> = Vec::new();
        for r in reports.iter().flat_map(|r| &r.rows) {
            for (k, _) in &r.params {
                if !params.contains(k) {
                    params.push(k.clone());
                }
            }
        }
        let mut columns = params.clone();
        columns.extend(["statistic", "value", "stderr", "n"].map(String::from));
        let mut t = Table { columns, rows: Vec::new() };
        for r in reports.iter().flat_map(|r| &r.rows) {
            let mut row: Vec<Cell> = params
                .iter()
                .map(|p| r.params.iter().find(|(k, _)| k == p).map_or(Cell::Empty, |(_, v)| Cell::F(*v)))
                .collect();
            row.extend([Cell::S(r.statistic.clone()), Cell::F(r.value), Cell::F(r.stderr), Cell::I(r.n)]);
            t.rows.push(row);
        }
        t
    }

    pub fn render(&self, header_comment: &str) -> String {
        let mut out = String::new();
        writeln!(out, "# {header_comment}").unwrap();
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(format_cell).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rwpin::analysis::StatRow;

    #[test]
    fn floats_round_trip_with_seventeen_digits() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
        assert_eq!(format_f64(f64::NAN), "NaN");
    }

    #[test]
    fn long_format_unions_parameters() {
        let mut a = StatReport::new("a");
        a.push(StatRow::new(&[("rho", 0.5), ("T", 10.0)], "x", 1.0, 0.1, 5));
        let mut b = StatReport::new("b");
        b.push(StatRow::new(&[("rho", 0.5), ("beta", 2.0)], "y", 2.0, 0.0, 1));
        let t = Table::from_reports(&[&a, &b]);
        assert_eq!(t.columns, ["rho", "T", "beta", "statistic", "value", "stderr", "n"]);
        let text = t.render("h");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# h");
        assert_eq!(lines[3].split(',').nth(1), Some(""));
        assert!(lines[3].ends_with(",y,2.0000000000000000e0,0.0000000000000000e0,1"));
    }

    #[test]
    fn strings_with_commas_are_quoted() {
        assert_eq!(format_cell(&Cell::S("a,\"b\"".into())), "\"a,\"\"b\"\"\"");
    }
}
