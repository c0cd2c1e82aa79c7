//! Error and delay statistics over run artifacts.

use serde::Serialize;
use thiserror::Error;

use super::artifacts::TelemetryRow;
use crate::math::Vec3;

/// Error band for settle times, metres.
pub const SETTLE_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no telemetry rows")]
    Empty,
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
}

/// Per-axis RMS plus the RMS of the error norm, metres.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AxisRms {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub norm: f64,
}

#[derive(Default)]
struct SquareSums {
    sx: f64,
    sy: f64,
    sz: f64,
    n: usize,
}

impl SquareSums {
    fn add(&mut self, e: Vec3<f64>) {
        self.sx += e.x * e.x;
        self.sy += e.y * e.y;
        self.sz += e.z * e.z;
        self.n += 1;
    }

    fn finish(&self) -> AxisRms {
        let n = self.n.max(1) as f64;
        AxisRms {
            x: (self.sx / n).sqrt(),
            y: (self.sy / n).sqrt(),
            z: (self.sz / n).sqrt(),
            norm: ((self.sx + self.sy + self.sz) / n).sqrt(),
        }
    }
}

/// Rows sharing one reference position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentRms {
    pub t_start_ms: f64,
    pub t_end_ms: f64,
    pub p_ref: [f64; 3],
    pub rows: usize,
    pub estimated: AxisRms,
    pub measured: AxisRms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmsReport {
    pub rms_ref_vs_estimated: AxisRms,
    pub rms_ref_vs_measured: AxisRms,
    pub segments: Vec<SegmentRms>,
}

/// Index ranges of maximal runs with an unchanged reference.
pub fn segments(rows: &[TelemetryRow]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].reference() != rows[start].reference() {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

pub fn compute_rms(rows: &[TelemetryRow]) -> Result<RmsReport, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = rows
        .iter()
        .position(|r| !(r.measured().is_finite() && r.estimated().is_finite() && r.reference().is_finite()))
    {
        return Err(MetricsError::NonFinite(i));
    }
    let (mut est, mut meas) = (SquareSums::default(), SquareSums::default());
    let mut segs = Vec::new();
    for range in segments(rows) {
        let (mut se, mut sm) = (SquareSums::default(), SquareSums::default());
        for r in &rows[range.clone()] {
            let (ee, em) = (r.reference() - r.estimated(), r.reference() - r.measured());
            se.add(ee);
            sm.add(em);
            est.add(ee);
            meas.add(em);
        }
        let first = &rows[range.start];
        segs.push(SegmentRms {
            t_start_ms: first.t_ms,
            t_end_ms: rows[range.end - 1].t_ms,
            p_ref: first.reference().to_array(),
            rows: range.len(),
            estimated: se.finish(),
            measured: sm.finish(),
        });
    }
    Ok(RmsReport { rms_ref_vs_estimated: est.finish(), rms_ref_vs_measured: meas.finish(), segments: segs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayStats {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Nearest-rank 99th percentile.
    pub p99: f64,
}

impl DelayStats {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = samples.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self { n, min: v[0], mean: v.iter().sum::<f64>() / n as f64, max: v[n - 1], p99: v[rank - 1] })
    }
}

/// Behaviour of the measured error inside one waypoint segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentResponse {
    pub t_switch_ms: f64,
    pub p_ref: [f64; 3],
    /// Error norm on the first row of the segment, m.
    pub initial_error: f64,
    pub peak_error: f64,
    /// Time of the peak after the switch, s.
    pub t_peak_s: f64,
    pub final_error: f64,
    /// Time after the switch from which the error stays inside the band, s.
    pub settle_s: Option<f64>,
}

/// Responses for segments that start outside the settle band, i.e. those
/// that ask the vehicle to move. A hold on the start position yields none.
pub fn segment_responses(rows: &[TelemetryRow], band: f64) -> Vec<SegmentResponse> {
    let mut out = Vec::new();
    for range in segments(rows) {
        let seg = &rows[range];
        let err: Vec<f64> = seg.iter().map(|r| (r.reference() - r.measured()).norm()).collect();
        if err[0] <= band {
            continue;
        }
        let t0 = seg[0].t_ms;
        let (i_peak, peak) =
            err.iter().copied().enumerate().fold((0, f64::MIN), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
        let settle = match err.iter().rposition(|&e| e > band) {
            Some(i) if i + 1 < seg.len() => Some((seg[i + 1].t_ms - t0) / 1000.0),
            Some(_) => None,
            None => Some(0.0),
        };
        out.push(SegmentResponse {
            t_switch_ms: t0,
            p_ref: seg[0].reference().to_array(),
            initial_error: err[0],
            peak_error: peak,
            t_peak_s: (seg[i_peak].t_ms - t0) / 1000.0,
            final_error: err[err.len() - 1],
            settle_s: settle,
        });
    }
    out
}
