//! Aligned likelihood tables and crossover detection.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::trace::TraceFile;

#[derive(Debug, Clone, PartialEq)]
pub struct Crossover {
    pub solver: String,
    /// First `k` after which this trace's `l` stays strictly above the
    /// baseline over the common prefix.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub baseline: usize,
    /// `(k, l per trace)`; `None` where a trace has ended.
    pub table: Vec<(usize, Vec<Option<f64>>)>,
    pub crossovers: Vec<Crossover>,
}

/// First `K` with `other[k] > base[k]` for every `k ≥ K` of the common prefix.
pub fn crossover(base: &[f64], other: &[f64]) -> Option<usize> {
    let n = base.len().min(other.len());
    let mut k = n;
    while k > 0 && other[k - 1] > base[k - 1] {
        k -= 1;
    }
    (k < n).then_some(k)
}

fn label(trace: &TraceFile, index: usize) -> String {
    trace
        .header_value("solver")
        .map(str::to_string)
        .unwrap_or_else(|| format!("trace{index}"))
}

/// Compares traces of one instance. The baseline is the first trace whose
/// `algorithm` header is `em`, else the first trace.
pub fn compare(traces: &[TraceFile]) -> Result<Comparison> {
    if traces.len() < 2 {
        return Err(Error::Config(format!(
            "compare needs at least two traces, got {}",
            traces.len()
        )));
    }
    let hash = |t: &TraceFile| t.header_value("instance_hash").unwrap_or("").to_string();
    let first = hash(&traces[0]);
    for t in &traces[1..] {
        let h = hash(t);
        if h != first {
            return Err(Error::InstanceMismatch(first, h));
        }
    }
    let mut labels: Vec<String> = traces.iter().enumerate().map(|(i, t)| label(t, i)).collect();
    for i in 0..labels.len() {
        if labels[..i].contains(&labels[i]) {
            labels[i] = format!("{}#{i}", labels[i]);
        }
    }
    let baseline = traces
        .iter()
        .position(|t| t.header_value("algorithm") == Some("em"))
        .unwrap_or(0);

    let series: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.rows.iter().map(|r| r.log_likelihood).collect())
        .collect();
    let longest = series.iter().map(Vec::len).max().unwrap_or(0);
    let table = (0..longest)
        .map(|k| (k, series.iter().map(|s| s.get(k).copied()).collect()))
        .collect();
    let crossovers = series
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != baseline)
        .map(|(i, s)| Crossover {
            solver: labels[i].clone(),
            iteration: crossover(&series[baseline], s),
        })
        .collect();
    Ok(Comparison {
        labels,
        baseline,
        table,
        crossovers,
    })
}

impl Comparison {
    /// The table as CSV: `k` then one `l` column per trace, blank when padded.
    pub fn render_table(&self) -> String {
        let mut out = String::from("k");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (k, values) in &self.table {
            out.push_str(&k.to_string());
            for v in values {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v:e}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn render_report(&self) -> String {
        let mut out = format!("baseline: {}\n", self.labels[self.baseline]);
        for c in &self.crossovers {
            match c.iteration {
                Some(k) => {
                    let _ = writeln!(out, "crossover {}: {k}", c.solver);
                }
                None => {
                    let _ = writeln!(out, "crossover {}: none", c.solver);
                }
            }
        }
        out
    }
}
