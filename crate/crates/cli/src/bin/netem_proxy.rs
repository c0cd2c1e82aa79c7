//! One direction of the emulated network as a UDP relay.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use cloudbed::exit::{fail, Failure};
use cloudbed_core::netem::{parse_schedule, Direction, NetemProxy, NetworkProfile, ProfileSchedule, ProxyConfig};

const NAME: &str = "netem-proxy";

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Uplink,
    Downlink,
}

/// Relays UDP datagrams from `--listen` to `--forward` with seeded delay,
/// jitter and loss.
#[derive(Parser)]
#[command(name = NAME, version)]
struct Args {
    #[arg(long)]
    listen: SocketAddr,
    #[arg(long)]
    forward: SocketAddr,
    #[arg(long, value_enum)]
    direction: Dir,
    #[arg(long, default_value_t = 0.0)]
    delay_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `t_start_ms delay_ms jitter_ms loss` lines; overrides the flags above.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// UDP port accepting `netprofile` lines at runtime.
    #[arg(long)]
    control: Option<SocketAddr>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let schedule = match &args.schedule {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_schedule(&text) {
                Ok(s) => s,
                Err(e) => return fail(NAME, Failure::Config, format!("{}: {e}", path.display())),
            },
            Err(e) => return fail(NAME, Failure::Io, format!("{}: {e}", path.display())),
        },
        None => match NetworkProfile::from_ms(args.delay_ms, args.jitter_ms, args.loss) {
            Ok(p) => ProfileSchedule::constant(p),
            Err(e) => return fail(NAME, Failure::Config, e),
        },
    };
    let direction = match args.direction {
        Dir::Uplink => Direction::Uplink,
        Dir::Downlink => Direction::Downlink,
    };
    let cfg = ProxyConfig {
        listen: args.listen,
        forward: args.forward,
        control: args.control,
        direction,
        seed: args.seed,
        schedule,
    };
    let mut proxy = match NetemProxy::bind(cfg) {
        Ok(p) => p,
        Err(e) => return fail(NAME, Failure::Io, format!("bind {}: {e}", args.listen)),
    };
    match proxy.control_addr() {
        Some(c) => println!("{NAME}: {:?} {} -> {}, control {c}", direction, args.listen, args.forward),
        None => println!("{NAME}: {:?} {} -> {}", direction, args.listen, args.forward),
    }

    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || proxy.run(&stop))
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
        Ok(Ok(s)) => {
            println!("{NAME}: sent={} dropped={} delivered={}", s.sent, s.dropped, s.delivered);
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => fail(NAME, Failure::Io, e),
        Err(_) => fail(NAME, Failure::Runtime, "relay thread panicked"),
    }
}
