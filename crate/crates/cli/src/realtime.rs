//! Multi-process realtime run on loopback.
//!
//! The runner starts `netem-proxy` twice (uplink and downlink), `cloud-agent`
//! and `robot-agent` as child processes, subscribes to the gateway stream in
//! batch mode and sends the scenario's waypoints over the same socket. The
//! clock of a run starts at the first telemetry record, so `t_ms` in the
//! artifacts lines up with a lockstep run of the same scenario.
//!
//! Telemetry and the delay trace are streamed to disk while the run is going
//! and flushed on every health check, so an interrupted run leaves readable
//! partial files. The delay trace of a realtime run has one row per telemetry
//! record that carries a round-trip sample; the network split (`d1`, `d2`) is
//! unknown outside lockstep and left empty.
//!
//! Realtime addresses with port 0 are replaced by free loopback ports.

use std::fmt::Write as _;
use std::future::Future;
use std::io;
use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::Duration;

use cloudbed_core::harness::artifacts::{
    ArtifactError, CsvSink, DelayRow, DELAY_TRACE_FILE, DELAY_TRACE_HEADER, METRICS_FILE, TELEMETRY_FILE,
    TELEMETRY_HEADER,
};
use cloudbed_core::harness::report::Report;
use cloudbed_core::harness::scenario::RealtimeSection;
use cloudbed_core::harness::{RunArtifacts, ScenarioConfig, TelemetryRow};
use cloudbed_core::protocol::TelemetryFrame;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::time::{sleep_until, Instant};
use tokio_tungstenite::tungstenite::Message;

use crate::exit::Failure;

pub const SCENARIO_FILE: &str = "scenario.scn";
pub const LOG_DIR: &str = "logs";

#[derive(Debug, Error)]
pub enum RealtimeError {
    #[error("{what}: {source}")]
    Io { what: String, source: io::Error },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("cannot start {}: {source}", program.display())]
    Spawn { program: PathBuf, source: io::Error },
    #[error("{name} exited early ({status}); see {}", log.display())]
    ChildExited { name: &'static str, status: ExitStatus, log: PathBuf },
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("no telemetry for {0:?}")]
    NoTelemetry(Duration),
}

impl RealtimeError {
    pub fn failure(&self) -> Failure {
        match self {
            RealtimeError::Io { .. } | RealtimeError::Artifact(_) => Failure::Io,
            _ => Failure::Runtime,
        }
    }
}

fn io_err(what: impl Into<String>) -> impl FnOnce(io::Error) -> RealtimeError {
    let what = what.into();
    move |source| RealtimeError::Io { what, source }
}

#[derive(Debug, Clone)]
pub struct Options {
    /// Directory holding the `robot-agent`, `cloud-agent` and `netem-proxy` executables.
    pub bin_dir: PathBuf,
    pub out_dir: PathBuf,
    /// How long the gateway may take to accept the stream and send a first record.
    pub startup_timeout: Duration,
    /// Longest tolerated gap between telemetry messages once running.
    pub telemetry_timeout: Duration,
}

impl Options {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            bin_dir: default_bin_dir(),
            out_dir: out_dir.into(),
            startup_timeout: Duration::from_secs(10),
            telemetry_timeout: Duration::from_secs(3),
        }
    }
}

/// `CLOUDBED_BIN_DIR` if set, else the directory of the running executable.
pub fn default_bin_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("CLOUDBED_BIN_DIR") {
        return dir.into();
    }
    std::env::current_exe().ok().and_then(|p| p.parent().map(Path::to_path_buf)).unwrap_or_default()
}

#[derive(Debug)]
pub struct Outcome {
    pub artifacts: RunArtifacts,
    /// Stopped by the interrupt future before the scenario's duration.
    pub interrupted: bool,
    pub report: Option<Report>,
}

/// Replaces port-0 addresses with free ports. All probe sockets stay open
/// until every address is chosen so no two roles get the same port.
pub fn resolve_ports(rt: &mut RealtimeSection) -> io::Result<()> {
    let mut udp = Vec::new();
    for addr in
        [&mut rt.robot, &mut rt.cloud, &mut rt.uplink_proxy, &mut rt.downlink_proxy, &mut rt.uplink_control, &mut rt.downlink_control]
    {
        if addr.port() == 0 {
            let s = UdpSocket::bind(SocketAddr::new(addr.ip(), 0))?;
            *addr = s.local_addr()?;
            udp.push(s);
        }
    }
    if rt.gateway.port() == 0 {
        rt.gateway = TcpListener::bind(SocketAddr::new(rt.gateway.ip(), 0))?.local_addr()?;
    }
    Ok(())
}

struct Proc {
    name: &'static str,
    child: Child,
    log: PathBuf,
}

/// Child processes, stopped in reverse start order.
struct Children {
    procs: Vec<Proc>,
}

impl Children {
    fn spawn(&mut self, bin_dir: &Path, log_dir: &Path, name: &'static str, label: &'static str, args: &[String]) -> Result<(), RealtimeError> {
        let program = bin_dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
        let log = log_dir.join(format!("{label}.log"));
        let out = std::fs::File::create(&log).map_err(io_err(log.display().to_string()))?;
        let err = out.try_clone().map_err(io_err(log.display().to_string()))?;
        let child = Command::new(&program)
            .args(args)
            .stdin(Stdio::null())
            .stdout(out)
            .stderr(err)
            .spawn()
            .map_err(|source| RealtimeError::Spawn { program, source })?;
        self.procs.push(Proc { name: label, child, log });
        Ok(())
    }

    fn check(&mut self) -> Result<(), RealtimeError> {
        for p in &mut self.procs {
            if let Ok(Some(status)) = p.child.try_wait() {
                return Err(RealtimeError::ChildExited { name: p.name, status, log: p.log.clone() });
            }
        }
        Ok(())
    }

    /// SIGTERM, then SIGKILL after `grace`. Returns one summary line per child.
    async fn shutdown(&mut self, grace: Duration) -> Vec<String> {
        let mut lines = Vec::new();
        for p in self.procs.iter_mut().rev() {
            if matches!(p.child.try_wait(), Ok(None)) {
                crate::signal::terminate(&p.child);
            }
            let deadline = Instant::now() + grace;
            let status = loop {
                match p.child.try_wait() {
                    Ok(Some(s)) => break Some(s),
                    Ok(None) if Instant::now() < deadline => tokio::time::sleep(Duration::from_millis(20)).await,
                    _ => {
                        let _ = p.child.kill();
                        break p.child.wait().ok();
                    }
                }
            };
            let last = std::fs::read_to_string(&p.log).ok().and_then(|t| t.lines().last().map(str::to_owned));
            lines.push(format!(
                "  {:<14} {:<12} {}",
                p.name,
                status.map_or("unknown".to_string(), |s| s.to_string()),
                last.unwrap_or_default()
            ));
        }
        self.procs.clear();
        lines.reverse();
        lines
    }
}

impl Drop for Children {
    fn drop(&mut self) {
        for p in &mut self.procs {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

struct Recorder {
    telemetry: CsvSink<TelemetryRow>,
    delay: CsvSink<DelayRow>,
    rows: Vec<TelemetryRow>,
    delay_rows: Vec<DelayRow>,
    t_first: Option<u64>,
}

impl Recorder {
    fn create(dir: &Path) -> Result<Self, RealtimeError> {
        Ok(Self {
            telemetry: CsvSink::create(&dir.join(TELEMETRY_FILE), &TELEMETRY_HEADER)?,
            delay: CsvSink::create(&dir.join(DELAY_TRACE_FILE), &DELAY_TRACE_HEADER)?,
            rows: Vec::new(),
            delay_rows: Vec::new(),
            t_first: None,
        })
    }

    fn push(&mut self, frame: &TelemetryFrame) -> Result<(), RealtimeError> {
        let t0 = *self.t_first.get_or_insert(frame.t);
        let mut row = TelemetryRow::from(frame);
        row.t_ms = frame.t.saturating_sub(t0) as f64 / 1000.0;
        if self.rows.last().is_some_and(|last| row.t_ms < last.t_ms) {
            return Ok(());
        }
        self.telemetry.push(&row)?;
        self.rows.push(row);
        if row.tau_raw_ms > 0.0 {
            let d = DelayRow {
                t_ms: row.t_ms,
                tau_raw_ms: row.tau_raw_ms,
                tau_hat_ms: row.tau_hat_ms,
                d1_ms: None,
                d2_ms: None,
                rtt_net_ms: None,
            };
            self.delay.push(&d)?;
            self.delay_rows.push(d);
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), RealtimeError> {
        self.telemetry.flush()?;
        self.delay.flush()?;
        Ok(())
    }
}

/// Executable name, log label and arguments of one child.
type ChildSpec = (&'static str, &'static str, Vec<String>);

fn child_args(cfg: &ScenarioConfig, dir: &Path) -> Result<[ChildSpec; 4], RealtimeError> {
    let rt = &cfg.realtime;
    let scenario = dir.join(SCENARIO_FILE);
    let text = toml::to_string(cfg).map_err(|e| RealtimeError::Io { what: "scenario".into(), source: io::Error::other(e) })?;
    std::fs::write(&scenario, text).map_err(io_err(scenario.display().to_string()))?;
    let mut schedules = Vec::new();
    for (name, entries) in [("uplink.sched", &cfg.uplink), ("downlink.sched", &cfg.downlink)] {
        let path = dir.join(name);
        std::fs::write(&path, ScenarioConfig::schedule_file(entries)).map_err(io_err(path.display().to_string()))?;
        schedules.push(path.display().to_string());
    }
    let s = |a: SocketAddr| a.to_string();
    let scn = scenario.display().to_string();
    let proxy = |dir: &str, listen, forward, control, seed: u64, schedule: &String| {
        vec![
            "--listen".into(),
            s(listen),
            "--forward".into(),
            s(forward),
            "--direction".into(),
            dir.into(),
            "--seed".into(),
            seed.to_string(),
            "--schedule".into(),
            schedule.clone(),
            "--control".into(),
            s(control),
        ]
    };
    Ok([
        ("netem-proxy", "uplink-proxy", proxy("uplink", rt.uplink_proxy, rt.cloud, rt.uplink_control, cfg.seeds.uplink, &schedules[0])),
        (
            "netem-proxy",
            "downlink-proxy",
            proxy("downlink", rt.downlink_proxy, rt.robot, rt.downlink_control, cfg.seeds.downlink, &schedules[1]),
        ),
        (
            "cloud-agent",
            "cloud-agent",
            vec![
                "--config".into(),
                scn.clone(),
                "--realtime".into(),
                "--bind".into(),
                s(rt.cloud),
                "--peer".into(),
                s(rt.downlink_proxy),
                "--gateway".into(),
                s(rt.gateway),
                "--netem-control".into(),
                s(rt.uplink_control),
                "--netem-control".into(),
                s(rt.downlink_control),
            ],
        ),
        (
            "robot-agent",
            "robot-agent",
            vec!["--config".into(), scn, "--realtime".into(), "--bind".into(), s(rt.robot), "--peer".into(), s(rt.uplink_proxy)],
        ),
    ])
}

/// Runs `cfg` as separate processes. Resolving `interrupt` stops the run
/// early; the partial artifacts are still written.
pub async fn run(
    cfg: &ScenarioConfig,
    opts: &Options,
    interrupt: impl Future<Output = ()>,
) -> Result<Outcome, RealtimeError> {
    let mut cfg = cfg.clone();
    resolve_ports(&mut cfg.realtime).map_err(io_err("allocating ports"))?;
    let dir = opts.out_dir.as_path();
    let log_dir = dir.join(LOG_DIR);
    std::fs::create_dir_all(&log_dir).map_err(io_err(log_dir.display().to_string()))?;

    let mut children = Children { procs: Vec::new() };
    let mut recorder = Recorder::create(dir)?;
    let mut interrupted = false;
    let result = async {
        for (bin, label, args) in child_args(&cfg, dir)? {
            children.spawn(&opts.bin_dir, &log_dir, bin, label, &args)?;
        }
        drive(&cfg, opts, &mut children, &mut recorder, interrupt, &mut interrupted).await
    }
    .await;

    let exits = children.shutdown(Duration::from_secs(3)).await;
    recorder.flush()?;
    let report = Report::build(&recorder.rows, &recorder.delay_rows).ok();
    let mut text = match &report {
        Some(r) => r.render(),
        None => "no metrics: no telemetry recorded\n".to_string(),
    };
    let _ = writeln!(text, "\nprocesses (realtime run{})", if interrupted { ", interrupted" } else { "" });
    for line in exits {
        let _ = writeln!(text, "{line}");
    }
    let metrics = dir.join(METRICS_FILE);
    std::fs::write(&metrics, text).map_err(io_err(metrics.display().to_string()))?;
    result?;

    let artifacts = RunArtifacts {
        name: cfg.name.clone(),
        telemetry: std::mem::take(&mut recorder.rows),
        delay_trace: std::mem::take(&mut recorder.delay_rows),
        ..RunArtifacts::default()
    };
    Ok(Outcome { artifacts, interrupted, report })
}

async fn drive(
    cfg: &ScenarioConfig,
    opts: &Options,
    children: &mut Children,
    recorder: &mut Recorder,
    interrupt: impl Future<Output = ()>,
    interrupted: &mut bool,
) -> Result<(), RealtimeError> {
    tokio::pin!(interrupt);
    let url = format!("ws://{}/stream?batch=1", cfg.realtime.gateway);
    let started = Instant::now();
    let ws = loop {
        tokio::select! {
            biased;
            _ = &mut interrupt => {
                *interrupted = true;
                return Ok(());
            }
            r = tokio_tungstenite::connect_async(url.as_str()) => match r {
                Ok((ws, _)) => break ws,
                Err(e) if started.elapsed() >= opts.startup_timeout => return Err(RealtimeError::Gateway(format!("{url}: {e}"))),
                Err(_) => {
                    children.check()?;
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        }
    };
    let (mut tx, mut rx) = ws.split();

    let mut waypoints = cfg.waypoints.clone();
    waypoints.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let mut next_wp = 0;
    let mut t0: Option<Instant> = None;
    let mut last_message = Instant::now();
    let mut health = tokio::time::interval(Duration::from_millis(500));
    let far = Instant::now() + Duration::from_secs(365 * 24 * 3600);
    let duration = Duration::from_secs_f64(cfg.duration_s);

    loop {
        let end = t0.map_or(far, |t| t + duration);
        let wp_at = match (t0, waypoints.get(next_wp)) {
            (Some(t), Some(w)) => t + Duration::from_secs_f64(w.t_s),
            _ => far,
        };
        tokio::select! {
            biased;
            _ = &mut interrupt => {
                *interrupted = true;
                break;
            }
            _ = sleep_until(end) => break,
            _ = sleep_until(wp_at) => {
                let w = waypoints[next_wp];
                next_wp += 1;
                let line = format!("waypoint {} {} {} {}", w.x, w.y, w.z, w.yaw);
                tx.send(Message::Text(line.into())).await.map_err(|e| RealtimeError::Gateway(e.to_string()))?;
            }
            _ = health.tick() => {
                children.check()?;
                recorder.flush()?;
                let limit = if t0.is_some() { opts.telemetry_timeout } else { opts.startup_timeout };
                if last_message.elapsed() > limit {
                    return Err(RealtimeError::NoTelemetry(limit));
                }
            }
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    last_message = Instant::now();
                    for line in text.lines() {
                        if line.starts_with("telemetry") {
                            let frame = TelemetryFrame::parse_record(line).map_err(|e| RealtimeError::Gateway(format!("{e}: {line}")))?;
                            recorder.push(&frame)?;
                            t0.get_or_insert_with(Instant::now);
                        } else if line.starts_with("err") {
                            return Err(RealtimeError::Gateway(line.to_string()));
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None => return Err(RealtimeError::Gateway("stream closed".into())),
                Some(Err(e)) => return Err(RealtimeError::Gateway(e.to_string())),
                Some(Ok(_)) => {}
            }
        }
    }
    let _ = tx.send(Message::Close(None)).await;
    Ok(())
}
