use std::env;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use crate::error::CliError;

pub const OUT_DIR_VAR: &str = "CDNSLA_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format!("{v:.6}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 records")
    }
}

/// A command's result in both output shapes.
pub struct Artifact {
    pub json: String,
    pub table: Table,
}

impl Artifact {
    pub fn new<T: Serialize>(value: &T, table: Table) -> Self {
        let mut json = serde_json::to_string_pretty(value).expect("artifact types serialize");
        json.push('\n');
        Self { json, table }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.json.clone(),
            Format::Csv => self.table.to_csv(),
        }
    }
}

/// Picks the format from the flag, then the output extension, then CSV.
pub fn resolve_format(flag: Option<Format>, out: Option<&Path>) -> Format {
    flag.or_else(|| match out?.extension()?.to_str()? {
        "json" => Some(Format::Json),
        "csv" => Some(Format::Csv),
        _ => None,
    })
    .unwrap_or(Format::Csv)
}

/// Where the artifact goes. `CDNSLA_OUT_DIR` replaces the directory part of
/// `--out`, or names a directory for a default file name when `--out` is
/// absent. `None` means stdout.
pub fn resolve_out(out: Option<&Path>, default_name: &str, format: Format) -> Option<PathBuf> {
    let dir = env::var_os(OUT_DIR_VAR).filter(|d| !d.is_empty());
    match (out, dir) {
        (Some(out), Some(dir)) => Some(Path::new(&dir).join(out.file_name()?)),
        (Some(out), None) => Some(out.to_path_buf()),
        (None, Some(dir)) => {
            let ext = match format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            Some(Path::new(&dir).join(format!("{default_name}.{ext}")))
        }
        (None, None) => None,
    }
}

pub fn write(target: Option<&Path>, body: &str) -> Result<(), CliError> {
    match target {
        None => io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::config(Path::new("<stdout>"), None, e.to_string())),
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)
                    .map_err(|e| CliError::config(dir, None, format!("output directory: {e}")))?;
            }
            fs::write(path, body)
                .map_err(|e| CliError::config(path, None, format!("cannot write output: {e}")))
        }
    }
}
