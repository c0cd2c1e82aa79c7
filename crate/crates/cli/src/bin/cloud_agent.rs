//! Cloud side: predictor, waypoint controller and the teleoperation gateway.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use cloudbed::exit::{fail, Failure};
use cloudbed::gateway::Gateway;
use cloudbed_core::bus::Bus;
use cloudbed_core::cloud_agent::{self, CloudAgent, CloudRuntime};
use cloudbed_core::harness::ScenarioConfig;
use cloudbed_core::wire::TunnelEndpoint;
use tokio::sync::watch;

const NAME: &str = "cloud-agent";

/// Runs the cloud side of a scenario against the wall clock.
#[derive(Parser)]
#[command(name = NAME, version)]
struct Args {
    /// Scenario file; its control and predictor settings are used.
    #[arg(long)]
    config: PathBuf,
    /// Run against the wall clock. Lockstep runs go through `testbed run`.
    #[arg(long)]
    realtime: bool,
    /// Local UDP address (default: the scenario's realtime.cloud).
    #[arg(long)]
    bind: Option<SocketAddr>,
    /// Where control datagrams go, normally the downlink proxy.
    #[arg(long)]
    peer: Option<SocketAddr>,
    /// HTTP/WebSocket gateway address.
    #[arg(long)]
    gateway: Option<SocketAddr>,
    /// Control port of a netem proxy that receives `netprofile` commands.
    /// Repeatable; defaults to both proxies of the scenario.
    #[arg(long = "netem-control")]
    netem_control: Vec<SocketAddr>,
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
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(NAME, Failure::Io, e),
    };
    let bind = args.bind.unwrap_or(cfg.realtime.cloud);
    let peer = args.peer.unwrap_or(cfg.realtime.downlink_proxy);
    let gateway_addr = args.gateway.unwrap_or(cfg.realtime.gateway);
    let netem_controls = if args.netem_control.is_empty() {
        vec![cfg.realtime.uplink_control, cfg.realtime.downlink_control]
    } else {
        args.netem_control
    };

    let endpoint = match TunnelEndpoint::bind(bind, peer) {
        Ok(e) => e,
        Err(e) => return fail(NAME, Failure::Io, format!("bind {bind}: {e}")),
    };
    let listener = match rt.block_on(tokio::net::TcpListener::bind(gateway_addr)) {
        Ok(l) => l,
        Err(e) => return fail(NAME, Failure::Io, format!("gateway {gateway_addr}: {e}")),
    };
    println!(
        "{NAME}: {} -> {peer}, gateway http://{}",
        endpoint.local_addr().map_or(bind, |a| a),
        listener.local_addr().map_or(gateway_addr, |a| a)
    );

    let bus = Arc::new(Bus::new());
    let agent = CloudAgent::new(cfg.cloud_config()).with_bus(Arc::clone(&bus));
    let (handle, events_tx, events_rx) = cloud_agent::event_queue();
    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = Arc::clone(&stop);
        let runtime = CloudRuntime { endpoint, netem_controls };
        std::thread::spawn(move || cloud_agent::run_realtime(agent, runtime, events_tx, events_rx, &stop))
    };

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let served = rt.block_on(async {
        let server = tokio::spawn(Gateway::new(handle, bus, shutdown_rx).serve(listener));
        tokio::select! {
            _ = cloudbed::signal::shutdown() => {}
            _ = cloudbed::signal::thread_finished(&worker) => {}
        }
        let _ = shutdown_tx.send(true);
        server.await
    });
    stop.store(true, Ordering::Relaxed);
    let counters = worker.join();
    rt.shutdown_timeout(std::time::Duration::from_secs(1));
    match served {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return fail(NAME, Failure::Io, format!("gateway: {e}")),
        Err(e) => return fail(NAME, Failure::Runtime, format!("gateway: {e}")),
    }
    match counters {
        Ok(Ok(c)) => {
            println!(
                "{NAME}: states_received={} stale={} controls_sent={} decode_errors={} clock_skew={} rejected_waypoints={}",
                c.states_received, c.stale_states, c.controls_sent, c.decode_errors, c.clock_skew, c.rejected_waypoints
            );
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => fail(NAME, Failure::Io, e),
        Err(_) => fail(NAME, Failure::Runtime, "control thread panicked"),
    }
}
