use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vwc_core::runner::{self, RunError, RunOverrides, RunSpec, ServeSpec};

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

/// Virtual workcell: haptic teleoperation of mock-ups with collision-stopped motion.
#[derive(Parser)]
#[command(name = "vwc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive a scene from a device script and write the state log, trajectory and timing report.
    Run(RunArgs),
    /// Run the servo, protocol server and UI bridge until interrupted.
    Serve(ServeArgs),
    /// Re-check a committed-state log against its scene.
    Replay(ReplayArgs),
    /// Measure servo timing with and without a stalled protocol client.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scene: PathBuf,
    /// JSON overrides: scale_level, frame_mode, force_law, record.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    script: PathBuf,
    /// Defaults to the script length.
    #[arg(long)]
    duration_ms: Option<f64>,
    #[arg(long, env = "VWC_HAPTIC_PORT", default_value_t = vwc_core::protocol::DEFAULT_HAPTIC_PORT)]
    haptic_port: u16,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "VWC_HAPTIC_PORT", default_value_t = vwc_core::protocol::DEFAULT_HAPTIC_PORT)]
    haptic_port: u16,
    #[arg(long, env = "VWC_UI_PORT", default_value_t = vwc_core::bridge::DEFAULT_UI_PORT)]
    ui_port: u16,
    /// Stop after this long instead of waiting for a signal.
    #[arg(long)]
    duration_ms: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding state_log.jsonl.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Explicit log path; overrides --out-dir.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    duration_ms: u64,
    /// Client stall injected into the second run; 0 skips it.
    #[arg(long, default_value_t = 1_000)]
    stall_ms: u64,
    /// Also write bench.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn overrides(path: Option<&Path>) -> Result<RunOverrides> {
    match path {
        Some(p) => Ok(RunOverrides::load(p)?),
        None => Ok(RunOverrides::default()),
    }
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::Release)) {
        log::warn!("no signal handler: {e}");
    }
    flag
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let spec = RunSpec {
        scene: a.common.scene,
        script: a.script,
        duration_ms: a.duration_ms,
        out_dir: a.common.out_dir,
        haptic_port: a.haptic_port,
        overrides: overrides(a.common.config.as_deref())?,
    };
    let stop = interrupt_flag();
    let summary = runner::run(&spec, Some(&stop))?;
    println!(
        "steps: {}, committed: {}, rejected: {} collision / {} workspace, waypoints: {}, max force: {:.3} N",
        summary.steps,
        summary.committed,
        summary.rejected_collision,
        summary.rejected_workspace,
        summary.waypoints,
        summary.max_force_n
    );
    println!(
        "servo: {:.1} Hz, {} missed of {} ticks",
        summary.servo.achieved_hz, summary.servo.missed, summary.servo.ticks
    );
    println!("outputs: {}", spec.out_dir.display());
    if summary.violated() {
        for v in &summary.replay.violations {
            eprintln!("invariant violation: {v:?}");
        }
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn cmd_serve(a: ServeArgs) -> Result<u8> {
    let spec = ServeSpec {
        scene: a.common.scene,
        haptic_port: a.haptic_port,
        ui_port: a.ui_port,
        out_dir: a.common.out_dir,
        overrides: overrides(a.common.config.as_deref())?,
        duration: a.duration_ms.map(Duration::from_millis),
    };
    let stop = interrupt_flag();
    let summary = runner::serve(&spec, &stop, |addrs| {
        println!("haptic server: {}", addrs.haptic);
        println!("ui bridge: ws://{}/", addrs.ui);
    })?;
    println!(
        "stopped after {} steps, {} commands; force zeroed",
        summary.steps, summary.commands
    );
    Ok(0)
}

fn cmd_replay(a: ReplayArgs) -> Result<u8> {
    let log = a.log.unwrap_or_else(|| a.out_dir.join("state_log.jsonl"));
    let report = runner::replay_log(&a.scene, &log, &overrides(a.config.as_deref())?)?;
    println!(
        "steps: {}, committed: {}, rejected: {} ({} with force), pair checks: {}, min distance: {}",
        report.steps,
        report.committed,
        report.rejected,
        report.rejected_with_force,
        report.pair_checks,
        report.min_distance_mm.map_or("n/a".to_string(), |d| format!("{d:.6} mm"))
    );
    if report.violations.is_empty() {
        println!("invariants: PASS");
        Ok(0)
    } else {
        for v in &report.violations {
            eprintln!("invariant violation: {v:?}");
        }
        println!("invariants: FAIL");
        Ok(EXIT_VIOLATION)
    }
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    if a.duration_ms == 0 {
        bail!(RunError::Usage("--duration-ms must be greater than zero".into()));
    }
    let stall = (a.stall_ms > 0).then(|| Duration::from_millis(a.stall_ms));
    let report = runner::bench(Duration::from_millis(a.duration_ms), stall)?;
    let b = &report.baseline;
    println!(
        "achieved: {:.1} Hz over {} ticks (realtime scheduling: {})",
        b.achieved_hz,
        b.ticks,
        if b.realtime { "yes" } else { "no" }
    );
    println!(
        "missed deadlines: {} ({:.4}%)",
        b.missed,
        100.0 * b.missed_fraction()
    );
    println!("period: mean {:.1} us, p99 {:.1} us, max {:.1} us", b.mean_period_us, b.p99_period_us, b.max_period_us);
    println!("rate: {}", if report.rate_ok() { "PASS" } else { "FAIL" });
    if let (Some(s), Some(ratio), Some(ok)) = (&report.stalled, report.p99_ratio, report.non_blocking_ok()) {
        println!(
            "stall {:.0} ms: p99 {:.1} us vs baseline {:.1} us (x{:.3})",
            report.stall_ms, s.p99_period_us, b.p99_period_us, ratio
        );
        println!("non-blocking: {}", if ok { "PASS" } else { "FAIL" });
    }
    if let Some(dir) = a.out_dir {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("bench.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

