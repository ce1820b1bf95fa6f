//! Output files: metadata headers, fixed-precision numbers, CSV and JSON writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved configuration document.
    pub config_sha256: String,
}

impl Meta {
    pub fn new(command: &str, seed: Option<u64>, config_toml: &str) -> Self {
        Meta {
            tool: "feedaxis".into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config_sha256: digest(config_toml),
        }
    }

    fn comment_lines(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
        format!(
            "# {} {}\n# command: {}\n# seed: {}\n# config_sha256: {}\n",
            self.tool, self.version, self.command, seed, self.config_sha256
        )
    }
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Decimal text with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exponent = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&exponent) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exponent).max(0) as usize;
    let text = format!("{v:.decimals$}");
    // rounding may carry into a new digit (9.999999999 -> 10.00000000)
    let text = if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        text
    };
    if text == "-0" { "0".into() } else { text }
}

fn round9(v: f64) -> f64 {
    fmt9(v).parse().unwrap_or(v)
}

fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().map(round9).and_then(serde_json::Number::from_f64) {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Writes `{"meta": ..., "data": ...}` with floats rounded to 9 significant digits.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, data: &T) -> Result<()> {
    let mut data = serde_json::to_value(data)?;
    round_numbers(&mut data);
    let doc = serde_json::json!({ "meta": meta, "data": data });
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// A CSV table whose cells are already formatted.
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path, meta: &Meta) -> Result<()> {
        let mut out = create(path)?;
        out.write_all(meta.comment_lines().as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a table written by [`Table::write`], skipping the metadata lines.
#[cfg(test)]
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
