//! Uniformly sampled simulation records and their CSV form.
//!
//! A trace file starts with `#` manifest lines followed by a CSV table:
//!
//! ```text
//! # schema_version = 1
//! # config_sha256 = 3f...
//! # seed = 1
//! t_s,x_m,...
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Spacing of consecutive `t` values (s).
    pub sample_period: f64,
}

impl SimTrace {
    /// Empty trace; the first column must be the time.
    pub fn new(columns: Vec<String>, sample_period: f64) -> Self {
        Self { columns, rows: Vec::new(), sample_period }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Strictly increasing time at the fixed sample period, consistent row
    /// widths and finite values only.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Trace(m));
        if self.columns.first().map(String::as_str) != Some("t_s") {
            return bad("first column must be t_s".into());
        }
        if !(self.sample_period > 0.0) {
            return bad(format!("sample period {} is not positive", self.sample_period));
        }
        for (k, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return bad(format!("row {k} has {} values, expected {}", row.len(), self.columns.len()));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return bad(format!("row {k}, column {} is not finite", self.columns[j]));
            }
            if k > 0 {
                let dt = row[0] - self.rows[k - 1][0];
                if !(dt > 0.0) || (dt - self.sample_period).abs() > 1e-6 * self.sample_period {
                    return bad(format!("row {k}: time step {dt} differs from {}", self.sample_period));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W, manifest: &Manifest) -> Result<()> {
        writeln!(w, "# schema_version = {}", manifest.schema_version)?;
        writeln!(w, "# config_sha256 = {}", manifest.config_sha256)?;
        writeln!(w, "# seed = {}", manifest.seed)?;
        writeln!(w, "# sample_period_s = {}", self.sample_period)?;
        writeln!(w, "{}", self.columns.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(Manifest, SimTrace)> {
        let mut meta = BTreeMap::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            match &columns {
                None => columns = Some(line.split(',').map(str::to_string).collect()),
                Some(_) => {
                    let row = line
                        .split(',')
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Trace(format!("bad value: {e}")))?;
                    rows.push(row);
                }
            }
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Trace(format!("manifest lacks {k}")));
        let parse_err = |k: &str| Error::Trace(format!("manifest field {k} is malformed"));
        let manifest = Manifest {
            schema_version: get("schema_version")?.parse().map_err(|_| parse_err("schema_version"))?,
            config_sha256: get("config_sha256")?.clone(),
            seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
        };
        let sample_period = get("sample_period_s")?.parse().map_err(|_| parse_err("sample_period_s"))?;
        let columns = columns.ok_or_else(|| Error::Trace("missing header".into()))?;
        Ok((manifest, SimTrace { columns, rows, sample_period }))
    }
}
