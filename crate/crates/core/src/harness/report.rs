//! Human-readable run summary and plot-ready data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::artifacts::{self, ArtifactError, DelayRow, TelemetryRow};
use super::metrics::{compute_rms, segment_responses, AxisRms, DelayStats, MetricsError, RmsReport, SegmentResponse, SETTLE_BAND};

pub const PLOT_ERROR_FILE: &str = "plot_error.csv";
pub const PLOT_DELAY_FILE: &str = "plot_delay.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rms: RmsReport,
    /// Network round trip d1 + d2, ms (lockstep only).
    pub rtt_net: Option<DelayStats>,
    /// Echo-measured round trip τₙ, ms.
    pub tau_raw: Option<DelayStats>,
    pub tau_hat: Option<DelayStats>,
    pub responses: Vec<SegmentResponse>,
}

impl Report {
    pub fn build(telemetry: &[TelemetryRow], delay: &[DelayRow]) -> Result<Self, MetricsError> {
        let rms = compute_rms(telemetry)?;
        let tau_raw = if delay.is_empty() {
            DelayStats::from_samples(telemetry.iter().filter(|r| r.tau_raw_ms > 0.0).map(|r| r.tau_raw_ms))
        } else {
            DelayStats::from_samples(delay.iter().map(|d| d.tau_raw_ms))
        };
        Ok(Self {
            rms,
            rtt_net: DelayStats::from_samples(delay.iter().filter_map(|d| d.rtt_net_ms)),
            tau_raw,
            tau_hat: DelayStats::from_samples(delay.iter().map(|d| d.tau_hat_ms)),
            responses: segment_responses(telemetry, SETTLE_BAND),
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let axis = |s: &mut String, label: &str, a: &AxisRms| {
            let _ = writeln!(s, "  {label:<22} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", a.x, a.y, a.z, a.norm);
        };
        let _ = writeln!(s, "position error RMS (m)");
        let _ = writeln!(s, "  {:<22} {:>9} {:>9} {:>9} {:>9}", "", "x", "y", "z", "norm");
        axis(&mut s, "ref vs estimated", &self.rms.rms_ref_vs_estimated);
        axis(&mut s, "ref vs measured", &self.rms.rms_ref_vs_measured);

        let _ = writeln!(s, "\nper segment (norm RMS, m)");
        let _ = writeln!(s, "  {:>10} {:>10} {:>26} {:>9} {:>9}", "start_s", "end_s", "reference", "est", "meas");
        for g in &self.rms.segments {
            let _ = writeln!(
                s,
                "  {:>10.3} {:>10.3} {:>26} {:>9.4} {:>9.4}",
                g.t_start_ms / 1000.0,
                g.t_end_ms / 1000.0,
                format!("({:.2}, {:.2}, {:.2})", g.p_ref[0], g.p_ref[1], g.p_ref[2]),
                g.estimated.norm,
                g.measured.norm
            );
        }

        let _ = writeln!(s, "\ndelay (ms)");
        let _ = writeln!(s, "  {:<22} {:>7} {:>9} {:>9} {:>9} {:>9}", "", "n", "min", "mean", "max", "p99");
        for (label, stats) in [("network rtt", &self.rtt_net), ("measured tau", &self.tau_raw), ("tau estimate", &self.tau_hat)]
        {
            match stats {
                Some(d) => {
                    let _ = writeln!(
                        s,
                        "  {label:<22} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                        d.n, d.min, d.mean, d.max, d.p99
                    );
                }
                None => {
                    let _ = writeln!(s, "  {label:<22} {:>7}", 0);
                }
            }
        }

        let _ = writeln!(s, "\nwaypoint response (measured error, band {SETTLE_BAND} m)");
        let _ = writeln!(s, "  {:>10} {:>26} {:>9} {:>9} {:>9} {:>9}", "switch_s", "reference", "peak_m", "peak_s", "final_m", "settle_s");
        for r in &self.responses {
            let settle = r.settle_s.map_or_else(|| "-".to_string(), |t| format!("{t:.3}"));
            let _ = writeln!(
                s,
                "  {:>10.3} {:>26} {:>9.4} {:>9.3} {:>9.4} {:>9}",
                r.t_switch_ms / 1000.0,
                format!("({:.2}, {:.2}, {:.2})", r.p_ref[0], r.p_ref[1], r.p_ref[2]),
                r.peak_error,
                r.t_peak_s,
                r.final_error,
                settle
            );
        }
        s
    }
}

#[derive(Serialize)]
struct ErrorPoint {
    t_ms: f64,
    err_est_m: f64,
    err_meas_m: f64,
}

#[derive(Serialize)]
struct DelayPoint {
    t_ms: f64,
    tau_raw_ms: f64,
    tau_hat_ms: f64,
    rtt_net_ms: Option<f64>,
}

/// Writes error-norm and delay series next to the run's CSVs.
pub fn write_plot_data(dir: &Path, telemetry: &[TelemetryRow], delay: &[DelayRow]) -> Result<Vec<PathBuf>, ArtifactError> {
    let err_path = dir.join(PLOT_ERROR_FILE);
    let mut sink = artifacts::CsvSink::create(&err_path, &["t_ms", "err_est_m", "err_meas_m"])?;
    for r in telemetry {
        sink.push(&ErrorPoint {
            t_ms: r.t_ms,
            err_est_m: (r.reference() - r.estimated()).norm(),
            err_meas_m: (r.reference() - r.measured()).norm(),
        })?;
    }
    sink.flush()?;
    let delay_path = dir.join(PLOT_DELAY_FILE);
    let mut sink = artifacts::CsvSink::create(&delay_path, &["t_ms", "tau_raw_ms", "tau_hat_ms", "rtt_net_ms"])?;
    for d in delay {
        sink.push(&DelayPoint { t_ms: d.t_ms, tau_raw_ms: d.tau_raw_ms, tau_hat_ms: d.tau_hat_ms, rtt_net_ms: d.rtt_net_ms })?;
    }
    sink.flush()?;
    Ok(vec![err_path, delay_path])
}

/// Reads a run directory, builds the report and writes the plot files.
pub fn report_dir(dir: &Path) -> Result<Report, ReportError> {
    let (telemetry, delay) = artifacts::read_dir(dir)?;
    let report = Report::build(&telemetry, &delay)?;
    write_plot_data(dir, &telemetry, &delay)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hold_only_run_has_empty_response_table() {
        let row = TelemetryRow {
            t_ms: 0.0,
            px: 0.0,
            py: 0.0,
            pz: 1.0,
            phx: 0.0,
            phy: 0.0,
            phz: 1.0,
            rx: 0.0,
            ry: 0.0,
            rz: 1.0,
            tau_raw_ms: 0.0,
            tau_hat_ms: 0.0,
            vcx: 0.0,
            vcy: 0.0,
            vcz: 0.0,
        };
        let rows: Vec<_> = (0..5).map(|i| TelemetryRow { t_ms: i as f64 * 20.0, ..row }).collect();
        let r = Report::build(&rows, &[]).unwrap();
        assert!(r.responses.is_empty());
        assert!(r.rtt_net.is_none());
        let text = r.render();
        assert!(text.contains("ref vs estimated"));
        let dir = tempfile::tempdir().unwrap();
        let files = write_plot_data(dir.path(), &rows, &[]).unwrap();
        assert!(files.iter().all(|f| f.exists()));
    }
}
