//! Scenario runner and report tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cloudbed::exit::{fail, Failure};
use cloudbed::realtime;
use cloudbed_core::harness::artifacts;
use cloudbed_core::harness::metrics::{compute_rms, AxisRms};
use cloudbed_core::harness::report::{self, Report, ReportError};
use cloudbed_core::harness::scenario::ScenarioError;
use cloudbed_core::harness::{run_lockstep, ScenarioConfig};

const NAME: &str = "testbed";

#[derive(Parser)]
#[command(name = NAME, version, about = "Cloud-robotics latency testbed")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write telemetry.csv, delay_trace.csv and metrics.txt.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Run robot, proxies and cloud as separate processes on the wall clock.
        #[arg(long)]
        realtime: bool,
        /// Output directory (default: the scenario's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a run directory and write plot data next to it.
    Report { dir: PathBuf },
    /// RMS position errors of a telemetry CSV.
    Rms { csv: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { scenario, realtime, out } => run(&scenario, realtime, out),
        Cmd::Report { dir } => match report::report_dir(&dir) {
            Ok(r) => {
                print!("{}", r.render());
                println!("\nplot data: {}, {}", report::PLOT_ERROR_FILE, report::PLOT_DELAY_FILE);
                ExitCode::SUCCESS
            }
            Err(e @ ReportError::Metrics(_)) => fail(NAME, Failure::Runtime, e),
            Err(e) => fail(NAME, Failure::Io, e),
        },
        Cmd::Rms { csv } => {
            let rows = match artifacts::read_telemetry(&csv) {
                Ok(r) => r,
                Err(e) => return fail(NAME, Failure::Io, e),
            };
            match compute_rms(&rows) {
                Ok(r) => {
                    println!("{:<18} {:>9} {:>9} {:>9} {:>9}", "rms (m)", "x", "y", "z", "norm");
                    let line = |label: &str, a: &AxisRms| {
                        println!("{label:<18} {:>9.5} {:>9.5} {:>9.5} {:>9.5}", a.x, a.y, a.z, a.norm)
                    };
                    line("ref vs estimated", &r.rms_ref_vs_estimated);
                    line("ref vs measured", &r.rms_ref_vs_measured);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(NAME, Failure::Runtime, e),
            }
        }
    }
}

fn run(path: &std::path::Path, realtime: bool, out: Option<PathBuf>) -> ExitCode {
    let cfg = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e @ ScenarioError::Io { .. }) => return fail(NAME, Failure::Io, e),
        Err(e) => return fail(NAME, Failure::Config, e),
    };
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    if realtime {
        return run_realtime(&cfg, dir);
    }
    let art = match run_lockstep(&cfg) {
        Ok(a) => a,
        Err(e) => return fail(NAME, Failure::Config, e),
    };
    if let Err(e) = art.write_dir(&dir) {
        return fail(NAME, Failure::Io, e);
    }
    print_summary(&cfg.name, &dir, Report::build(&art.telemetry, &art.delay_trace).ok());
    ExitCode::SUCCESS
}

fn run_realtime(cfg: &ScenarioConfig, dir: PathBuf) -> ExitCode {
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(NAME, Failure::Io, e),
    };
    let opts = realtime::Options::new(&dir);
    match rt.block_on(realtime::run(cfg, &opts, cloudbed::signal::shutdown())) {
        Ok(outcome) => {
            print_summary(&cfg.name, &dir, outcome.report);
            if outcome.interrupted {
                eprintln!("{NAME}: interrupted; partial results flushed to {}", dir.display());
                Failure::Interrupted.into()
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            let code = e.failure();
            fail(NAME, code, e)
        }
    }
}

fn print_summary(name: &str, dir: &std::path::Path, report: Option<Report>) {
    println!("scenario {name}");
    if let Some(r) = report {
        print!("{}", r.render());
    }
    println!("\nwrote {}", dir.display());
}
