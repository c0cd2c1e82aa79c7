//! Run outputs and their CSV encoding.
//!
//! A run directory holds `telemetry.csv`, `delay_trace.csv` and `metrics.txt`.
//! Both CSVs have fixed headers and time-ordered rows.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_agent::{CloudCounters, DelayRecord};
use crate::math::Vec3;
use crate::netem::ChannelStats;
use crate::protocol::TelemetryFrame;
use crate::robot_agent::RobotCounters;
use crate::time::{micros_to_ms, Micros};

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const DELAY_TRACE_FILE: &str = "delay_trace.csv";
pub const METRICS_FILE: &str = "metrics.txt";

pub const TELEMETRY_HEADER: [&str; 15] =
    ["t_ms", "px", "py", "pz", "phx", "phy", "phz", "rx", "ry", "rz", "tau_raw_ms", "tau_hat_ms", "vcx", "vcy", "vcz"];
pub const DELAY_TRACE_HEADER: [&str; 6] = ["t_ms", "tau_raw_ms", "tau_hat_ms", "d1_ms", "d2_ms", "rtt_net_ms"];

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: u64, msg: String },
    #[error("{path}: unexpected header {got:?}")]
    Header { path: PathBuf, got: Vec<String> },
    #[error("{path}: row {row} goes back in time")]
    Order { path: PathBuf, row: u64 },
}

/// One control cycle: measured, estimated (predicted) and reference position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub t_ms: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub phx: f64,
    pub phy: f64,
    pub phz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tau_raw_ms: f64,
    pub tau_hat_ms: f64,
    pub vcx: f64,
    pub vcy: f64,
    pub vcz: f64,
}

impl TelemetryRow {
    pub fn measured(&self) -> Vec3<f64> {
        Vec3::new(self.px, self.py, self.pz)
    }

    pub fn estimated(&self) -> Vec3<f64> {
        Vec3::new(self.phx, self.phy, self.phz)
    }

    pub fn reference(&self) -> Vec3<f64> {
        Vec3::new(self.rx, self.ry, self.rz)
    }
}

impl From<&TelemetryFrame> for TelemetryRow {
    fn from(f: &TelemetryFrame) -> Self {
        Self {
            t_ms: micros_to_ms(f.t),
            px: f.p_measured.x,
            py: f.p_measured.y,
            pz: f.p_measured.z,
            phx: f.p_predicted.x,
            phy: f.p_predicted.y,
            phz: f.p_predicted.z,
            rx: f.p_ref.x,
            ry: f.p_ref.y,
            rz: f.p_ref.z,
            tau_raw_ms: f.tau_raw_ms,
            tau_hat_ms: f.tau_hat_ms,
            vcx: f.v_cmd.x,
            vcy: f.v_cmd.y,
            vcz: f.v_cmd.z,
        }
    }
}

/// One round-trip sample. The network split is only known in lockstep runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub t_ms: f64,
    pub tau_raw_ms: f64,
    pub tau_hat_ms: f64,
    pub d1_ms: Option<f64>,
    pub d2_ms: Option<f64>,
    pub rtt_net_ms: Option<f64>,
}

impl DelayRow {
    pub fn from_record(r: &DelayRecord, d1: Option<Micros>, d2: Option<Micros>) -> Self {
        let rtt = d1.zip(d2).map(|(a, b)| micros_to_ms(a + b));
        Self {
            t_ms: micros_to_ms(r.t),
            tau_raw_ms: micros_to_ms(r.tau_n),
            tau_hat_ms: r.tau_hat_us / 1000.0,
            d1_ms: d1.map(micros_to_ms),
            d2_ms: d2.map(micros_to_ms),
            rtt_net_ms: rtt,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunCounters {
    pub robot: RobotCounters,
    pub cloud: CloudCounters,
    pub uplink: ChannelStats,
    pub downlink: ChannelStats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub name: String,
    pub telemetry: Vec<TelemetryRow>,
    pub delay_trace: Vec<DelayRow>,
    /// Ground-truth robot position at each publication; empty in realtime runs.
    pub truth: Vec<(Micros, Vec3<f64>)>,
    pub counters: RunCounters,
}

impl RunArtifacts {
    /// Writes both CSVs and the metrics report into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ArtifactError> {
        std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Io { path: dir.to_owned(), source })?;
        write_csv(&dir.join(TELEMETRY_FILE), &TELEMETRY_HEADER, &self.telemetry)?;
        write_csv(&dir.join(DELAY_TRACE_FILE), &DELAY_TRACE_HEADER, &self.delay_trace)?;
        let text = match super::report::Report::build(&self.telemetry, &self.delay_trace) {
            Ok(r) => r.render(),
            Err(e) => format!("no metrics: {e}\n"),
        };
        let path = dir.join(METRICS_FILE);
        let mut text = text;
        text.push_str(&self.counters_text());
        std::fs::write(&path, text).map_err(|source| ArtifactError::Io { path, source })
    }

    fn counters_text(&self) -> String {
        let c = &self.counters;
        format!(
            "\ncounters\n  robot   states_sent={} controls_applied={} stale={} rejected={} failsafe_trips={}\n  \
             cloud   states_received={} stale={} controls_sent={} decode_errors={} clock_skew={}\n  \
             uplink  sent={} dropped={} delivered={}\n  downlink sent={} dropped={} delivered={}\n",
            c.robot.states_sent,
            c.robot.controls_applied,
            c.robot.stale_controls,
            c.robot.rejected_controls,
            c.robot.failsafe_trips,
            c.cloud.states_received,
            c.cloud.stale_states,
            c.cloud.controls_sent,
            c.cloud.decode_errors,
            c.cloud.clock_skew,
            c.uplink.sent,
            c.uplink.dropped,
            c.uplink.delivered,
            c.downlink.sent,
            c.downlink.dropped,
            c.downlink.delivered,
        )
    }
}

/// Streams rows to `path` as they are produced; used by the realtime runner
/// so an interrupted run still leaves readable files.
pub struct CsvSink<R> {
    path: PathBuf,
    writer: csv::Writer<File>,
    _row: std::marker::PhantomData<R>,
}

impl<R: Serialize> CsvSink<R> {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, ArtifactError> {
        let file = File::create(path).map_err(|source| ArtifactError::Io { path: path.to_owned(), source })?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(header).map_err(|e| csv_io(path, e))?;
        Ok(Self { path: path.to_owned(), writer, _row: std::marker::PhantomData })
    }

    pub fn push(&mut self, row: &R) -> Result<(), ArtifactError> {
        self.writer.serialize(row).map_err(|e| csv_io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), ArtifactError> {
        self.writer.flush().map_err(|source| ArtifactError::Io { path: self.path.clone(), source })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> ArtifactError {
    ArtifactError::Io { path: path.to_owned(), source: io::Error::other(e.to_string()) }
}

fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), ArtifactError> {
    let mut sink = CsvSink::create(path, header)?;
    for r in rows {
        sink.push(r)?;
    }
    sink.flush()
}

trait Timed {
    fn t_ms(&self) -> f64;
}

impl Timed for TelemetryRow {
    fn t_ms(&self) -> f64 {
        self.t_ms
    }
}

impl Timed for DelayRow {
    fn t_ms(&self) -> f64 {
        self.t_ms
    }
}

fn read_csv<R: for<'de> Deserialize<'de> + Timed>(path: &Path, header: &[&str]) -> Result<Vec<R>, ArtifactError> {
    let file = File::open(path).map_err(|source| ArtifactError::Io { path: path.to_owned(), source })?;
    let mut reader = csv::Reader::from_reader(file);
    let got = reader.headers().map_err(|e| parse_error(path, &e, 1))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(ArtifactError::Header { path: path.to_owned(), got: got.iter().map(str::to_owned).collect() });
    }
    let mut rows: Vec<R> = Vec::new();
    for (i, rec) in reader.deserialize::<R>().enumerate() {
        // Row 1 is the header.
        let row_no = i as u64 + 2;
        let row = rec.map_err(|e| parse_error(path, &e, row_no))?;
        if rows.last().is_some_and(|prev| row.t_ms() < prev.t_ms()) {
            return Err(ArtifactError::Order { path: path.to_owned(), row: row_no });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_error(path: &Path, e: &csv::Error, fallback_row: u64) -> ArtifactError {
    let row = e.position().map_or(fallback_row, |p| p.line());
    let msg = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    ArtifactError::Parse { path: path.to_owned(), row, msg }
}

pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryRow>, ArtifactError> {
    read_csv(path, &TELEMETRY_HEADER)
}

pub fn read_delay_trace(path: &Path) -> Result<Vec<DelayRow>, ArtifactError> {
    read_csv(path, &DELAY_TRACE_HEADER)
}

/// Reads both CSVs back from a run directory.
pub fn read_dir(dir: &Path) -> Result<(Vec<TelemetryRow>, Vec<DelayRow>), ArtifactError> {
    Ok((read_telemetry(&dir.join(TELEMETRY_FILE))?, read_delay_trace(&dir.join(DELAY_TRACE_FILE))?))
}
