//! Trace and snapshot files.
//!
//! A trace is UTF-8 text: header lines `# key: value`, a column line, then one
//! comma-delimited row per outer iteration (rejected trust-region steps
//! included). Floats use the shortest round-trip scientific form; absent
//! values are blank.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::proximal::{IterateTrace, MONOTONE_SLACK};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const COLUMNS: [&str; 12] = [
    "k",
    "log_likelihood",
    "dist_to_ref",
    "beta",
    "delta",
    "step_norm",
    "accepted",
    "wall_time_s",
    "kl_step",
    "grad_inf",
    "inner_iters",
    "inexact",
];

/// Index of the timing column, the only one allowed to differ between
/// repeated runs.
pub const WALL_TIME_COLUMN: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub log_likelihood: f64,
    pub dist_to_ref: f64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub step_norm: Option<f64>,
    pub accepted: Option<bool>,
    pub wall_time_s: f64,
    pub kl_step: Option<f64>,
    pub grad_inf: f64,
    pub inner_iters: usize,
    pub inexact: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    /// Header entries in file order.
    pub header: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl TraceRow {
    fn to_line(&self) -> String {
        [
            self.k.to_string(),
            fmt_f64(self.log_likelihood),
            fmt_f64(self.dist_to_ref),
            fmt_opt(self.beta),
            fmt_opt(self.delta),
            fmt_opt(self.step_norm),
            self.accepted.map(|a| a.to_string()).unwrap_or_default(),
            fmt_f64(self.wall_time_s),
            fmt_opt(self.kl_step),
            fmt_f64(self.grad_inf),
            self.inner_iters.to_string(),
            self.inexact.to_string(),
        ]
        .join(",")
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(Error::MalformedTrace(format!(
                "line {lineno}: expected {} fields, found {}",
                COLUMNS.len(),
                fields.len()
            )));
        }
        let bad = |col: usize| Error::MalformedTrace(format!("line {lineno}: bad {} '{}'", COLUMNS[col], fields[col]));
        let float = |col: usize| fields[col].parse::<f64>().map_err(|_| bad(col));
        let opt = |col: usize| {
            if fields[col].is_empty() {
                Ok(None)
            } else {
                float(col).map(Some)
            }
        };
        let boolean = |col: usize| fields[col].parse::<bool>().map_err(|_| bad(col));
        Ok(Self {
            k: fields[0].parse().map_err(|_| bad(0))?,
            log_likelihood: float(1)?,
            dist_to_ref: float(2)?,
            beta: opt(3)?,
            delta: opt(4)?,
            step_norm: opt(5)?,
            accepted: if fields[6].is_empty() { None } else { Some(boolean(6)?) },
            wall_time_s: float(7)?,
            kl_step: opt(8)?,
            grad_inf: float(9)?,
            inner_iters: fields[10].parse().map_err(|_| bad(10))?,
            inexact: boolean(11)?,
        })
    }
}

impl TraceFile {
    /// Rows for `trace`, with distances measured to `reference`.
    pub fn from_trace(trace: &IterateTrace, reference: &ParameterVector, header: Vec<(String, String)>) -> Self {
        let rows = trace
            .records
            .iter()
            .map(|r| TraceRow {
                k: r.k,
                log_likelihood: r.log_likelihood,
                dist_to_ref: (r.theta.as_vector() - reference.as_vector()).norm(),
                beta: r.beta,
                delta: r.delta,
                step_norm: r.step_norm,
                accepted: r.accepted,
                wall_time_s: r.elapsed,
                kl_step: r.kl_step,
                grad_inf: r.grad_inf,
                inner_iters: r.inner_iters,
                inexact: r.inexact,
            })
            .collect();
        Self { header, rows }
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::MalformedTrace(format!("line {lineno}: header without ':'")))?;
                header.push((k.trim().to_string(), v.trim().to_string()));
            } else if !seen_columns {
                if line != COLUMNS.join(",") {
                    return Err(Error::MalformedTrace(format!(
                        "line {lineno}: unexpected column line '{line}'"
                    )));
                }
                seen_columns = true;
            } else if !line.is_empty() {
                rows.push(TraceRow::parse(line, lineno)?);
            }
        }
        if !seen_columns {
            return Err(Error::MalformedTrace("missing column line".into()));
        }
        if rows.windows(2).any(|w| w[1].k <= w[0].k) {
            return Err(Error::MalformedTrace("rows not ordered by k".into()));
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rows holding distinct iterates: the first row and every row reached by
    /// an accepted step.
    pub fn accepted_rows(&self) -> Vec<&TraceRow> {
        let mut out: Vec<&TraceRow> = self.rows.first().into_iter().collect();
        for w in self.rows.windows(2) {
            if w[0].accepted == Some(true) {
                out.push(&w[1]);
            }
        }
        out
    }

    /// Checks that `l` never decreases along accepted steps beyond roundoff.
    pub fn validate_monotone(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            let (before, after) = (w[0].log_likelihood, w[1].log_likelihood);
            if after < before - MONOTONE_SLACK * (1.0 + before.abs()) {
                return Err(Error::MonotonicityViolated { before, after });
            }
        }
        Ok(())
    }

    /// Rows rendered without the timing column, for determinism checks.
    pub fn timeless_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let line = r.to_line();
                let mut fields: Vec<&str> = line.split(',').collect();
                fields.remove(WALL_TIME_COLUMN);
                fields.join(",")
            })
            .collect()
    }
}

/// `out/name.csv` → `out/name.snapshots.csv`.
pub fn snapshots_path(trace_path: &Path) -> PathBuf {
    let stem = trace_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    trace_path.with_file_name(format!("{stem}.snapshots.csv"))
}

/// Stored iterates of one run, keyed by `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotFile {
    pub header: Vec<(String, String)>,
    pub stride: usize,
    pub snapshots: BTreeMap<usize, Vec<f64>>,
}

impl SnapshotFile {
    /// Keeps every `stride`-th iterate plus the final one.
    pub fn from_trace(trace: &IterateTrace, stride: usize, header: Vec<(String, String)>) -> Self {
        let last = trace.last().k;
        let snapshots = trace
            .records
            .iter()
            .filter(|r| r.k % stride == 0 || r.k == last)
            .map(|r| (r.k, r.theta.to_vec()))
            .collect();
        Self {
            header,
            stride,
            snapshots,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# stride: {}", self.stride);
        let pixels = self.snapshots.values().next().map_or(0, Vec::len);
        out.push_str(&matrix_columns(pixels));
        out.push('\n');
        for (k, values) in &self.snapshots {
            out.push_str(&matrix_row(&k.to_string(), values));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut stride = None;
        let mut snapshots = BTreeMap::new();
        let mut seen_columns = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::MalformedTrace(format!("line {lineno}: header without ':'")))?;
                let (k, v) = (k.trim(), v.trim());
                if k == "stride" {
                    stride = Some(
                        v.parse()
                            .map_err(|_| Error::MalformedTrace(format!("bad stride '{v}'")))?,
                    );
                } else {
                    header.push((k.to_string(), v.to_string()));
                }
            } else if !seen_columns {
                seen_columns = true;
            } else if !line.is_empty() {
                let mut fields = line.split(',');
                let k = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::MalformedTrace(format!("line {lineno}: bad iteration")))?;
                let values = fields
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|_| Error::MalformedTrace(format!("line {lineno}: bad pixel value")))?;
                snapshots.insert(k, values);
            }
        }
        let stride = stride.ok_or_else(|| Error::MalformedTrace("snapshot file has no stride".into()))?;
        Ok(Self {
            header,
            stride,
            snapshots,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Description of what is stored, for error messages.
    pub fn cadence(&self) -> String {
        let last = self.snapshots.keys().next_back().copied().unwrap_or(0);
        format!("every {} iterations from 0, plus final iteration {last}", self.stride)
    }
}

pub(crate) fn matrix_columns(pixels: usize) -> String {
    std::iter::once("k".to_string())
        .chain((0..pixels).map(|i| format!("p{i}")))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn matrix_row(label: &str, values: &[f64]) -> String {
    std::iter::once(label.to_string())
        .chain(values.iter().map(|&v| fmt_f64(v)))
        .collect::<Vec<_>>()
        .join(",")
}
