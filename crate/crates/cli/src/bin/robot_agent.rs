//! Simulated drone: plant, onboard controller and sensors behind a UDP tunnel.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use cloudbed::exit::{fail, Failure};
use cloudbed_core::harness::ScenarioConfig;
use cloudbed_core::robot_agent::{self, RobotAgent};
use cloudbed_core::wire::TunnelEndpoint;

const NAME: &str = "robot-agent";

/// Runs the robot side of a scenario against the wall clock.
#[derive(Parser)]
#[command(name = NAME, version)]
struct Args {
    /// Scenario file; its plant, robot and seed settings are used.
    #[arg(long)]
    config: PathBuf,
    /// Run against the wall clock. Lockstep runs go through `testbed run`.
    #[arg(long)]
    realtime: bool,
    /// Local UDP address (default: the scenario's realtime.robot).
    #[arg(long)]
    bind: Option<SocketAddr>,
    /// Where state datagrams go, normally the uplink proxy.
    #[arg(long)]
    peer: Option<SocketAddr>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if !args.realtime {
        return fail(NAME, Failure::Config, "standalone agents only run with --realtime; use `testbed run` for lockstep");
    }
    let cfg = match ScenarioConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(NAME, Failure::Config, e),
    };
    let agent = match RobotAgent::new(cfg.robot_config()) {
        Ok(a) => a,
        Err(e) => return fail(NAME, Failure::Config, e),
    };
    let bind = args.bind.unwrap_or(cfg.realtime.robot);
    let peer = args.peer.unwrap_or(cfg.realtime.uplink_proxy);
    let endpoint = match TunnelEndpoint::bind(bind, peer) {
        Ok(e) => e,
        Err(e) => return fail(NAME, Failure::Io, format!("bind {bind}: {e}")),
    };
    println!("{NAME}: {} -> {peer}", endpoint.local_addr().map_or(bind, |a| a));

    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || robot_agent::run_realtime(agent, endpoint, &stop))
    };
    let rt = match tokio::runtime::Builder::new_current_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(NAME, Failure::Io, e),
    };
    rt.block_on(async {
        tokio::select! {
            _ = cloudbed::signal::shutdown() => {}
            _ = cloudbed::signal::thread_finished(&worker) => {}
        }
    });
    stop.store(true, Ordering::Relaxed);
    match worker.join() {
        Ok(Ok(c)) => {
            println!(
                "{NAME}: states_sent={} controls_applied={} stale={} rejected={} failsafe_trips={} decode_errors={}",
                c.states_sent, c.controls_applied, c.stale_controls, c.rejected_controls, c.failsafe_trips, c.decode_errors
            );
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => fail(NAME, Failure::Io, e),
        Err(_) => fail(NAME, Failure::Runtime, "simulation thread panicked"),
    }
}
