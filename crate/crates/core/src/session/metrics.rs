use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SegmentInfo, SessionError};
use crate::geometry::Point3;

/// Reference and end-effector samples pair up only within this distance in time.
pub const PAIRING_WINDOW_MS: u64 = 100;
pub const MIN_ALIGNED_PAIRS: usize = 10;
/// Speed is a centered difference over ±this window on the reference series.
pub const SPEED_HALF_WINDOW_MS: u64 = 200;
/// Per-segment means skip this much of each segment's start (about 4τ).
pub const SETTLING_WINDOW_MS: u64 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t_ms: u64,
    pub p: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t_ms: u64,
    pub error_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub sample_count: usize,
    pub mean_error_m: f64,
    pub max_error_m: f64,
}

impl ErrorSummary {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        Some(Self {
            sample_count: errors.len(),
            mean_error_m: errors.iter().sum::<f64>() / errors.len() as f64,
            max_error_m: errors.iter().copied().fold(0.0, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start_ms: u64,
    pub end_ms: u64,
    pub nominal_speed_mps: f64,
    pub sample_count: usize,
    /// `None` when no samples fall after the settling window.
    pub mean_error_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub sample_count: usize,
    /// Mean of |commanded target − end effector| over the paired samples.
    pub mean_error_m: f64,
    pub max_error_m: f64,
    pub speed_error_correlation: f64,
    /// Set when either series has no variance; the correlation is then reported as 0.
    pub correlation_degenerate: bool,
    /// Filtered wrist target vs ground-truth wrist.
    #[serde(default)]
    pub tracking: Option<ErrorSummary>,
    /// Ground-truth wrist vs end effector: the composition comparable to a
    /// motion-capture measurement.
    #[serde(default)]
    pub end_to_end: Option<ErrorSummary>,
    #[serde(default)]
    pub segments: Vec<SegmentReport>,
    pub series: Vec<MetricSample>,
}

/// Pearson correlation; `None` when either side has (numerically) no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let flat = |ss: f64, m: f64| (ss / n as f64).sqrt() <= 1e-9 * m.abs().max(1e-12);
    if flat(sxx, mx) || flat(syy, my) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn nearest(series: &[TimedPoint], t_ms: u64) -> Option<&TimedPoint> {
    let i = series.partition_point(|s| s.t_ms < t_ms);
    let after = series.get(i);
    let before = i.checked_sub(1).and_then(|j| series.get(j));
    match (before, after) {
        (Some(b), Some(a)) => Some(if t_ms - b.t_ms <= a.t_ms - t_ms { b } else { a }),
        (b, a) => b.or(a),
    }
}

fn speed_at(reference: &[TimedPoint], t_ms: u64) -> f64 {
    let lo = nearest(reference, t_ms.saturating_sub(SPEED_HALF_WINDOW_MS));
    let hi = nearest(reference, t_ms + SPEED_HALF_WINDOW_MS);
    match (lo, hi) {
        (Some(a), Some(b)) if b.t_ms > a.t_ms => a.p.distance(b.p) / ((b.t_ms - a.t_ms) as f64 / 1000.0),
        _ => 0.0,
    }
}

/// Pairs each reference sample with the nearest end-effector sample (within
/// [`PAIRING_WINDOW_MS`]) and summarizes the errors. Both series must be
/// sorted by time.
pub fn compute_metrics(reference: &[TimedPoint], ee: &[TimedPoint]) -> Result<PrecisionReport, SessionError> {
    let series: Vec<MetricSample> = reference
        .iter()
        .filter_map(|r| {
            let e = nearest(ee, r.t_ms).filter(|e| e.t_ms.abs_diff(r.t_ms) <= PAIRING_WINDOW_MS)?;
            Some(MetricSample { t_ms: r.t_ms, error_m: r.p.distance(e.p), speed_mps: speed_at(reference, r.t_ms) })
        })
        .collect();
    if series.len() < MIN_ALIGNED_PAIRS {
        return Err(SessionError::InsufficientData { pairs: series.len() });
    }
    let errors: Vec<f64> = series.iter().map(|s| s.error_m).collect();
    let speeds: Vec<f64> = series.iter().map(|s| s.speed_mps).collect();
    let summary = ErrorSummary::from_errors(&errors).expect("non-empty");
    let r = pearson(&speeds, &errors);
    Ok(PrecisionReport {
        sample_count: series.len(),
        mean_error_m: summary.mean_error_m,
        max_error_m: summary.max_error_m,
        speed_error_correlation: r.unwrap_or(0.0),
        correlation_degenerate: r.is_none(),
        tracking: None,
        end_to_end: None,
        segments: Vec::new(),
        series,
    })
}

impl PrecisionReport {
    /// Fills per-segment means, skipping each segment's settling window.
    pub fn add_segments(&mut self, segments: &[SegmentInfo]) {
        self.segments = segments
            .iter()
            .map(|seg| {
                let from = seg.start_ms + SETTLING_WINDOW_MS;
                let errs: Vec<f64> =
                    self.series.iter().filter(|s| s.t_ms >= from && s.t_ms <= seg.end_ms).map(|s| s.error_m).collect();
                SegmentReport {
                    start_ms: seg.start_ms,
                    end_ms: seg.end_ms,
                    nominal_speed_mps: seg.speed_mps,
                    sample_count: errs.len(),
                    mean_error_m: ErrorSummary::from_errors(&errs).map(|s| s.mean_error_m),
                }
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,error_m,speed_mps\n");
        for s in &self.series {
            let _ = writeln!(out, "{},{},{}", s.t_ms, s.error_m, s.speed_mps);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples:            {}", self.sample_count);
        let _ = writeln!(out, "mean error:         {:.4} m (max {:.4} m)", self.mean_error_m, self.max_error_m);
        if self.correlation_degenerate {
            let _ = writeln!(out, "speed/error r:      undefined (no spread)");
        } else {
            let _ = writeln!(out, "speed/error r:      {:.3}", self.speed_error_correlation);
        }
        if let Some(t) = &self.tracking {
            let _ = writeln!(out, "tracking error:     {:.4} m over {} samples", t.mean_error_m, t.sample_count);
        }
        if let Some(e) = &self.end_to_end {
            let _ = writeln!(out, "truth vs ee error:  {:.4} m over {} samples", e.mean_error_m, e.sample_count);
        }
        for seg in &self.segments {
            match seg.mean_error_m {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "segment {:>6}-{:<6} ms  v={:.3} m/s  mean {:.4} m  n={}",
                        seg.start_ms, seg.end_ms, seg.nominal_speed_mps, m, seg.sample_count
                    );
                }
                None => {
                    let _ = writeln!(out, "segment {:>6}-{:<6} ms  no settled samples", seg.start_ms, seg.end_ms);
                }
            }
        }
        out
    }
}
