//! Lockstep runs end to end: artifacts, metrics and the shipped scenarios.

use std::path::PathBuf;

use cloudbed_core::harness::artifacts::{self, TELEMETRY_FILE};
use cloudbed_core::harness::metrics::compute_rms;
use cloudbed_core::harness::report::{report_dir, ReportError};
use cloudbed_core::harness::scenario::{ProfileEntry, ScenarioConfig, WaypointEntry};
use cloudbed_core::harness::{run_lockstep, TelemetryRow};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"));
    ScenarioConfig::load(&path).unwrap()
}

#[test]
fn shipped_scenarios_load() {
    for name in ["paper_mission", "paper_fig3", "step", "smoke"] {
        let cfg = scenario(name);
        assert_eq!(cfg.name, name);
    }
}

#[test]
fn written_artifacts_are_byte_identical() {
    let cfg = scenario("paper_mission");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_lockstep(&cfg).unwrap().write_dir(a.path()).unwrap();
    run_lockstep(&cfg).unwrap().write_dir(b.path()).unwrap();
    for f in [artifacts::TELEMETRY_FILE, artifacts::DELAY_TRACE_FILE, artifacts::METRICS_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (tel, _) = artifacts::read_dir(a.path()).unwrap();
    assert_eq!(tel, run_lockstep(&cfg).unwrap().telemetry);
}

#[test]
fn rms_matches_two_pass_oracle() {
    let mut rng = Pcg64::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(1..2000);
        let rows: Vec<TelemetryRow> = (0..n)
            .map(|i| {
                let mut g = || rng.random_range(-3.0..3.0);
                TelemetryRow {
                    t_ms: i as f64,
                    px: g(),
                    py: g(),
                    pz: g(),
                    phx: g(),
                    phy: g(),
                    phz: g(),
                    rx: 1.0,
                    ry: -1.0,
                    rz: 0.5,
                    tau_raw_ms: 0.0,
                    tau_hat_ms: 0.0,
                    vcx: 0.0,
                    vcy: 0.0,
                    vcz: 0.0,
                }
            })
            .collect();
        let report = compute_rms(&rows).unwrap();
        // First pass: error series. Second pass: mean of squares.
        let err: Vec<[f64; 3]> = rows.iter().map(|r| [r.rx - r.px, r.ry - r.py, r.rz - r.pz]).collect();
        for (axis, got) in [report.rms_ref_vs_measured.x, report.rms_ref_vs_measured.y, report.rms_ref_vs_measured.z]
            .into_iter()
            .enumerate()
        {
            let ms = err.iter().map(|e| e[axis] * e[axis]).sum::<f64>() / n as f64;
            let want = ms.sqrt();
            assert!((got - want).abs() <= 1e-12 * want, "{got} {want}");
        }
        let norm = (err.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n as f64).sqrt();
        assert!((report.rms_ref_vs_measured.norm - norm).abs() <= 1e-12 * norm);
    }
}

fn mission(delay_ms: f64, jitter_ms: f64, seed: u64) -> ScenarioConfig {
    let link = vec![ProfileEntry { t_start_ms: 0.0, delay_ms, jitter_ms, loss: 0.0 }];
    let mut cfg = scenario("paper_mission");
    cfg.uplink = link.clone();
    cfg.downlink = link;
    cfg.seeds.uplink = seed;
    cfg.seeds.downlink = seed + 1;
    cfg.seeds.sensor = seed + 2;
    cfg
}

#[test]
fn estimate_beats_measurement_across_delays() {
    for (delay, jitter) in [(10.0, 0.0), (20.0, 10.0), (50.0, 20.0), (70.0, 40.0)] {
        for seed in [1, 10, 100] {
            let art = run_lockstep(&mission(delay, jitter, seed)).unwrap();
            let r = compute_rms(&art.telemetry).unwrap();
            assert!(
                r.rms_ref_vs_estimated.norm <= r.rms_ref_vs_measured.norm,
                "{delay}±{jitter} seed {seed}: {} > {}",
                r.rms_ref_vs_estimated.norm,
                r.rms_ref_vs_measured.norm
            );
        }
    }
}

#[test]
fn raised_delay_raises_measured_round_trip() {
    let mut cfg = ScenarioConfig {
        duration_s: 12.0,
        waypoints: vec![WaypointEntry { t_s: 0.5, x: 0.5, y: 0.0, z: 0.0, yaw: 0.0 }],
        ..ScenarioConfig::default()
    };
    let entries = vec![
        ProfileEntry { t_start_ms: 0.0, delay_ms: 50.0, jitter_ms: 5.0, loss: 0.0 },
        ProfileEntry { t_start_ms: 6000.0, delay_ms: 70.0, jitter_ms: 5.0, loss: 0.0 },
    ];
    cfg.uplink = entries.clone();
    cfg.downlink = entries;
    let art = run_lockstep(&cfg).unwrap();
    let mean = |lo: f64, hi: f64| {
        let v: Vec<f64> =
            art.delay_trace.iter().filter(|d| d.t_ms >= lo && d.t_ms < hi).map(|d| d.tau_raw_ms).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (before, after) = (mean(3000.0, 6000.0), mean(9000.0, 12000.0));
    assert!((after - before - 40.0).abs() < 5.0, "{before} -> {after}");
}

#[test]
fn report_reads_back_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let art = run_lockstep(&scenario("smoke")).unwrap();
    art.write_dir(dir.path()).unwrap();
    let report = report_dir(dir.path()).unwrap();
    let rtt = report.rtt_net.unwrap();
    assert!(rtt.min >= 60.0 && rtt.max <= 140.0);
    assert_eq!(report.responses.len(), 1);
    assert!(report.responses[0].settle_s.is_some());
    assert!(dir.path().join("plot_error.csv").exists());

    let path = dir.path().join(TELEMETRY_FILE);
    let mut lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[10] = "garbage".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    match report_dir(dir.path()) {
        Err(ReportError::Artifact(artifacts::ArtifactError::Parse { row, .. })) => assert_eq!(row, 11),
        other => panic!("{other:?}"),
    }
}

#[test]
fn hold_scenario_has_no_waypoint_responses() {
    let cfg = ScenarioConfig { duration_s: 2.0, ..ScenarioConfig::default() };
    let art = run_lockstep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    art.write_dir(dir.path()).unwrap();
    assert!(report_dir(dir.path()).unwrap().responses.is_empty());
}
