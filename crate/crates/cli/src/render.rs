use crate::args::Format;
use serde_json::Value;
use std::fmt::Write as _;

/// A cell keeps the exact value for TSV and a rounded one for tables.
pub enum Cell {
    Text(String),
    Num(f64),
    Int(u64),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

fn exact(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

fn rounded(x: f64) -> String {
    let a = x.abs();
    if !x.is_finite() {
        exact(x)
    } else if x == 0.0 {
        "0".into()
    } else if (1e-3..1e5).contains(&a) {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{x:.3e}")
    }
}

impl Cell {
    fn text(&self, precise: bool) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if precise => exact(*x),
            Cell::Num(x) => rounded(*x),
        }
    }
}

pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(title: impl Into<String>, headers: Vec<S>) -> Self {
        Self { title: title.into(), headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

/// Everything a subcommand prints: tables for humans, a JSON document for
/// machines.
pub struct Output {
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub json: Value,
}

pub fn render(out: &Output, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&out.json).expect("json output serializes");
            s.push('\n');
            s
        }
        Format::Tsv => {
            let mut s = String::new();
            for t in &out.tables {
                let _ = writeln!(s, "# {}", t.title);
                let _ = writeln!(s, "{}", t.headers.join("\t"));
                for r in &t.rows {
                    let cells: Vec<String> = r.iter().map(|c| c.text(true)).collect();
                    let _ = writeln!(s, "{}", cells.join("\t"));
                }
            }
            s
        }
        Format::Table => {
            let mut s = String::new();
            for (i, t) in out.tables.iter().enumerate() {
                if i > 0 {
                    s.push('\n');
                }
                let _ = writeln!(s, "{}", t.title);
                let body: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| c.text(false)).collect()).collect();
                let widths: Vec<usize> = (0..t.headers.len())
                    .map(|j| body.iter().map(|r| r[j].len()).chain([t.headers[j].len()]).max().unwrap_or(0))
                    .collect();
                let line = |cells: &[String]| {
                    let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    padded.join("  ").trim_end().to_string()
                };
                let _ = writeln!(s, "{}", line(&t.headers));
                for r in &body {
                    let _ = writeln!(s, "{}", line(r));
                }
            }
            for n in &out.notes {
                let _ = writeln!(s, "{n}");
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(rounded(0.5), "0.5");
        assert_eq!(rounded(1.25e-7), "1.250e-7");
        assert_eq!(rounded(f64::INFINITY), "inf");
        assert_eq!(exact(0.1 + 0.2), "0.30000000000000004");
    }

    #[test]
    fn tsv_is_exact() {
        let mut t = Table::new("t", vec!["a", "b"]);
        t.push(vec!["x".into(), (1.0f64 / 3.0).into()]);
        let out = Output { tables: vec![t], notes: vec![], json: Value::Null };
        assert_eq!(render(&out, Format::Tsv), "# t\na\tb\nx\t0.3333333333333333\n");
    }
}
