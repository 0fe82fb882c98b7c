//! Convergence-rate diagnostics on a distance-to-limit series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::trace::TraceFile;

pub const DEFAULT_TAIL: f64 = 0.3;

/// Minimum accepted rows for a rate report.
pub const MIN_ACCEPTED_ROWS: usize = 10;

/// Distances below `UNDERFLOW_FACTOR · ε · ‖θ*‖` are roundoff.
pub const UNDERFLOW_FACTOR: f64 = 1e2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateThresholds {
    pub linear_min: f64,
    pub linear_max: f64,
    pub superlinear_max: f64,
    /// Largest `|slope|` of `ln r_k` per iteration still called flat.
    pub slope_tol: f64,
}

impl Default for RateThresholds {
    fn default() -> Self {
        Self {
            linear_min: 0.2,
            linear_max: 0.999,
            superlinear_max: 0.2,
            slope_tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateClass {
    Linear,
    Superlinear,
    Inconclusive,
}

impl std::fmt::Display for RateClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateClass::Linear => "linear",
            RateClass::Superlinear => "superlinear",
            RateClass::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// `r_k = d_{k+1} / d_k` over the kept series.
    pub ratios: Vec<f64>,
    /// Number of trailing ratios in the tail window.
    pub tail_len: usize,
    pub tail_median: f64,
    /// Least-squares slope of `ln r_k` against position in the tail.
    pub tail_slope: f64,
    pub classification: RateClass,
    /// Index in the distance series where it was cut for underflow.
    pub truncated_at: Option<usize>,
}

impl RateReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "ratios: {}\ntail: {} of {}\ntail_median: {:.6}\ntail_slope: {:.6}\nclassification: {}\n",
            self.ratios.len(),
            self.tail_len,
            self.ratios.len(),
            self.tail_median,
            self.tail_slope,
            self.classification
        );
        if let Some(i) = self.truncated_at {
            out.push_str(&format!(
                "note: series truncated at accepted iterate {i} (distance at roundoff level)\n"
            ));
        }
        out
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Rate report for the distances `d_k = ‖θ_k − θ*‖` of successive iterates.
///
/// The series stops before the first distance below `floor`; the tail window
/// holds the last `ceil(tail · n)` ratios (at least two).
pub fn analyze_distances(distances: &[f64], floor: f64, tail: f64, thresholds: &RateThresholds) -> Result<RateReport> {
    if !(tail > 0.0 && tail <= 1.0) {
        return Err(Error::Config(format!("tail fraction must lie in (0, 1], got {tail}")));
    }
    let cut = distances.iter().position(|&d| d.is_nan() || d <= floor);
    let kept = &distances[..cut.unwrap_or(distances.len())];
    let ratios: Vec<f64> = kept.windows(2).map(|w| w[1] / w[0]).collect();
    if ratios.len() < 2 {
        return Err(Error::InsufficientRows {
            found: kept.len(),
            required: 3,
        });
    }
    let tail_len = ((tail * ratios.len() as f64).ceil() as usize).clamp(2, ratios.len());
    let window = &ratios[ratios.len() - tail_len..];
    let tail_median = median(window);
    let logs: Vec<f64> = window.iter().map(|r| r.ln()).collect();
    let tail_slope = slope(&logs);

    let classification = if tail_slope < -thresholds.slope_tol && tail_median < thresholds.superlinear_max {
        RateClass::Superlinear
    } else if (thresholds.linear_min..=thresholds.linear_max).contains(&tail_median)
        && tail_slope.abs() <= thresholds.slope_tol
    {
        RateClass::Linear
    } else {
        RateClass::Inconclusive
    };
    Ok(RateReport {
        ratios,
        tail_len,
        tail_median,
        tail_slope,
        classification,
        truncated_at: cut,
    })
}

/// Rate report for a trace file, over its accepted rows.
pub fn analyze_trace(trace: &TraceFile, tail: f64, thresholds: &RateThresholds) -> Result<RateReport> {
    let rows = trace.accepted_rows();
    if rows.len() < MIN_ACCEPTED_ROWS {
        return Err(Error::InsufficientRows {
            found: rows.len(),
            required: MIN_ACCEPTED_ROWS,
        });
    }
    let reference_norm: f64 = trace
        .header_value("reference_norm")
        .ok_or_else(|| Error::MalformedTrace("no reference_norm header".into()))?
        .parse()
        .map_err(|_| Error::MalformedTrace("bad reference_norm header".into()))?;
    let distances: Vec<f64> = rows.iter().map(|r| r.dist_to_ref).collect();
    let floor = UNDERFLOW_FACTOR * f64::EPSILON * reference_norm;
    analyze_distances(&distances, floor, tail, thresholds)
}
