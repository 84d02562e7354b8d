//! Tabular output: full-precision CSV or aligned text at display precision.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    /// Decimals shown in table format.
    pub decimals: usize,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[(&str, usize)]) -> Self {
        Table {
            name: name.into(),
            columns: columns
                .iter()
                .map(|&(n, d)| Column {
                    name: n.to_owned(),
                    decimals: d,
                })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    // Shortest representation that round-trips.
                    Cell::Num(x) => format!("{x:?}"),
                    Cell::Text(s) if s.contains(',') => format!("\"{s}\""),
                    Cell::Text(s) => s.clone(),
                    Cell::Empty => String::new(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.columns)
                    .map(|(c, col)| match c {
                        Cell::Num(x) => format!("{x:.*}", col.decimals),
                        Cell::Text(s) => s.clone(),
                        Cell::Empty => "-".into(),
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                cells
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain([c.name.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, items: &[String]| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        let header: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule);
        for row in &cells {
            line(&mut out, row);
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Table => self.to_text(),
        }
    }
}

/// Identifies the inputs of a run; written as `#` comment lines on top of
/// every output.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: String,
    pub models: Vec<(String, String)>,
    pub seed: Option<u64>,
}

pub fn version() -> String {
    format!("v{}-{}", env!("CARGO_PKG_VERSION"), env!("QHR_GIT_VERSION"))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Provenance {
    pub fn header(&self) -> String {
        let mut out = format!("# qhr {} {}\n", version(), self.command);
        for (label, hash) in &self.models {
            let _ = writeln!(out, "# model {label} sha256={hash}");
        }
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "# seed {s}");
            }
            None => out.push_str("# seed none\n"),
        }
        out
    }
}

/// Writes each table to `<out>/<table name>.csv` (or `.txt`), or all of
/// them to stdout separated by blank lines.
pub fn emit(tables: &[Table], prov: &Provenance, format: Format, out: Option<&Path>) -> Result<()> {
    let header = prov.header();
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let ext = match format {
                Format::Csv => "csv",
                Format::Table => "txt",
            };
            for t in tables {
                let path = dir.join(format!("{}.{ext}", t.name));
                let body = format!("{header}{}", t.render(format));
                std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        None => {
            let mut body = header;
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    body.push('\n');
                }
                body.push_str(&t.render(format));
            }
            print!("{body}");
        }
    }
    Ok(())
}
