//! Report tables, provenance headers and atomic file output.
//!
//! CSV reports start with `# key: value` provenance lines, then one schema
//! row, then the body. Only the provenance block carries a timestamp, so the
//! schema row and body are byte-identical across reruns of one config.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        debug_assert_eq!(self.columns, other.columns);
        self.rows.extend(other.rows);
    }

    /// Schema row plus body.
    pub fn csv_body(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn json_rows(&self) -> Vec<Value> {
        self.rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (col, cell) in self.columns.iter().zip(row) {
                    obj.insert(col.clone(), cell_value(cell));
                }
                Value::Object(obj)
            })
            .collect()
    }
}

fn cell_value(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = cell.parse::<i64>() {
        return json!(i);
    }
    match cell.parse::<f64>() {
        Ok(f) if f.is_finite() => json!(f),
        _ => match cell {
            "true" => json!(true),
            "false" => json!(false),
            _ => json!(cell),
        },
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub generated_unix: u64,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            command: cfg.command.name(),
            config_sha256: cfg.hash(),
            seed: cfg.seed(),
            generated_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# csp {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n# generated_unix: {}\n",
            self.version, self.command, self.config_sha256, self.seed, self.generated_unix
        )
    }

    fn json(&self) -> Value {
        json!({
            "version": self.version,
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "generated_unix": self.generated_unix,
        })
    }
}

pub fn render(table: &Table, provenance: &Provenance, format: Format) -> String {
    match format {
        Format::Csv => format!("{}{}", provenance.csv_header(), table.csv_body()),
        Format::Json => {
            let doc = json!({
                "provenance": provenance.json(),
                "columns": table.columns,
                "rows": table.json_rows(),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("json values serialize");
            s.push('\n');
            s
        }
    }
}

/// Parsed CSV report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCsv {
    pub provenance: Vec<(String, String)>,
    pub table: Table,
}

/// Reads back a CSV report written by [`render`].
pub fn parse_csv(text: &str) -> Result<ParsedCsv, String> {
    let mut provenance = Vec::new();
    let mut lines = text.lines();
    let schema = loop {
        let line = lines.next().ok_or("missing schema row")?;
        match line.strip_prefix("# ") {
            Some(meta) => match meta.split_once(": ") {
                Some((k, v)) => provenance.push((k.to_string(), v.to_string())),
                None => provenance.push(("title".to_string(), meta.to_string())),
            },
            None => break line,
        }
    };
    let columns: Vec<&str> = schema.split(',').collect();
    let mut table = Table::new(&columns);
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != columns.len() {
            return Err(format!(
                "row {} has {} cells, schema has {}",
                i + 1,
                row.len(),
                columns.len()
            ));
        }
        table.rows.push(row);
    }
    Ok(ParsedCsv { provenance, table })
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial report.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    write_bytes_atomic(path, contents.as_bytes())
}

pub fn write_bytes_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}
