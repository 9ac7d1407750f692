//! Process-level drivers: scripted runs, the live serve loop and the servo bench.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bridge::{self, BridgeError, BridgeEvent, BridgeServer, ServerMessage};
use crate::device::{DeviceError, DeviceSource, Keyframe, Script};
use crate::geometry::Vec3;
use crate::mapping::{FrameMode, ScaleLevel};
use crate::protocol::{encode_frame, HapticClient, HapticServer, Message, ProtocolError};
use crate::servo::{ConstraintModel, ForceLaw, ServoConfig, ServoLoop, TimingReport};
use crate::session::{
    read_log, replay, save_trajectory, RecordMode, ReplayReport, Scene, Session, SessionError, StateLog, StepOutcome,
};

const CLIENT_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("haptic link: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("servo did not advance within {0:?}")]
    ServoStalled(Duration),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Optional settings layered over the scene file's config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOverrides {
    pub scale_level: Option<ScaleLevel>,
    pub frame_mode: Option<FrameMode>,
    pub force_law: Option<ForceLaw>,
    /// Recording mode for the run's trajectory; manual when unset.
    pub record: Option<RecordMode>,
}

impl RunOverrides {
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        crate::session::read_json(path)
    }

    pub fn apply(&self, scene: &mut Scene) -> Result<(), SessionError> {
        if let Some(l) = self.scale_level {
            scene.config.default_level = l;
        }
        if let Some(f) = self.frame_mode {
            scene.config.frame_mode = f;
        }
        if let Some(law) = self.force_law {
            scene.config.force_law = law;
        }
        scene.config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scene: PathBuf,
    pub script: PathBuf,
    /// Virtual run length; the script's last keyframe when unset.
    pub duration_ms: Option<f64>,
    pub out_dir: PathBuf,
    pub haptic_port: u16,
    pub overrides: RunOverrides,
}

impl RunSpec {
    pub fn trajectory_path(&self) -> PathBuf {
        self.out_dir.join("trajectory.json")
    }

    pub fn state_log_path(&self) -> PathBuf {
        self.out_dir.join("state_log.jsonl")
    }

    pub fn timing_path(&self) -> PathBuf {
        self.out_dir.join("timing.json")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if let Some(d) = self.duration_ms {
            if !(d > 0.0 && d.is_finite()) {
                return Err(RunError::Usage(format!("duration must be a positive number of ms, got {d}")));
            }
        }
        let outputs = [self.trajectory_path(), self.state_log_path(), self.timing_path()];
        for input in [&self.scene, &self.script] {
            if outputs.iter().any(|o| o == input) {
                return Err(RunError::Usage(format!("{} would be overwritten by an output", input.display())));
            }
        }
        if self.scene == self.script {
            return Err(RunError::Usage("scene and script must be different files".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub committed: u64,
    pub rejected_collision: u64,
    pub rejected_workspace: u64,
    pub waypoints: usize,
    pub max_force_n: f64,
    pub servo: TimingReport,
    pub replay: ReplayReport,
}

impl RunSummary {
    pub fn violated(&self) -> bool {
        !self.replay.violations.is_empty()
    }
}

/// Servo plus protocol server on a background thread, fed through a shared cell.
struct LiveServo {
    handle: crate::servo::ServoHandle,
    cell: Arc<crossbeam::atomic::AtomicCell<crate::device::RawInput>>,
    addr: SocketAddr,
}

impl LiveServo {
    fn start(port: u16) -> Result<Self, RunError> {
        let (source, cell) = DeviceSource::external();
        let server = HapticServer::bind(("127.0.0.1", port))?;
        let addr = server.local_addr().map_err(ProtocolError::Io)?;
        let handle = ServoLoop::new(ServoConfig::default(), source).with_server(server).spawn(None);
        Ok(LiveServo { handle, cell, addr })
    }
}

/// Boot servo, protocol and session in one process and drive the stylus
/// from the script on a fixed virtual clock. Each step writes the scripted
/// input, waits for the servo to sample it, then polls it over TCP, so the
/// state log depends only on the inputs.
pub fn run(spec: &RunSpec, interrupt: Option<&AtomicBool>) -> Result<RunSummary, RunError> {
    spec.validate()?;
    let mut scene = Scene::load(&spec.scene)?;
    spec.overrides.apply(&mut scene)?;
    let script = Script::load(&spec.script)?;
    std::fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;

    let dt = 1000.0 / scene.config.scene_rate_hz;
    let duration = spec.duration_ms.unwrap_or_else(|| script.end_ms());
    let steps = (duration / dt + 1e-9).floor() as u64 + 1;

    let live = LiveServo::start(spec.haptic_port)?;
    let shared = live.handle.shared.clone();
    let result = (|| -> Result<_, RunError> {
        let mut client = HapticClient::connect(live.addr, CLIENT_TIMEOUT)?;
        let log = StateLog::create(&spec.state_log_path())?;
        let mut session = Session::new(scene).with_log(log);
        session.start_recording(spec.overrides.record.unwrap_or(RecordMode::Manual))?;
        session.set_clutch(true);

        let mut summary = RunSummary::default();
        let mut prev_t = f64::NEG_INFINITY;
        for k in 0..steps {
            if interrupt.is_some_and(|i| i.load(Ordering::Acquire)) {
                break;
            }
            let t = k as f64 * dt;
            live.cell.store(script.drive(t));
            for engaged in script.clutch_events(prev_t, t) {
                session.set_clutch(engaged);
            }
            prev_t = t;
            if !shared.wait_ticks(2, Duration::from_secs(1)) {
                return Err(RunError::ServoStalled(Duration::from_secs(1)));
            }
            let report = session.step(&mut client, t)?;
            summary.steps += 1;
            match report.outcome {
                StepOutcome::Committed => summary.committed += 1,
                StepOutcome::RejectedCollision => summary.rejected_collision += 1,
                StepOutcome::RejectedWorkspace => summary.rejected_workspace += 1,
                StepOutcome::Idle => {}
            }
            let f = crate::servo::servo_tick(&report.stylus, &report.model).force.norm();
            summary.max_force_n = summary.max_force_n.max(f);
        }
        client.set_force_model(&ConstraintModel::inactive())?;
        session.flush_log()?;
        let waypoints = session.stop_recording().unwrap_or_default();
        save_trajectory(&waypoints, &spec.trajectory_path())?;
        summary.waypoints = waypoints.len();
        Ok(summary)
    })();
    let servo = live.handle.stop();
    let mut summary = result?;
    summary.servo = servo;

    let mut fresh = Scene::load(&spec.scene)?;
    spec.overrides.apply(&mut fresh)?;
    summary.replay = replay(fresh, &read_log(&spec.state_log_path())?)?;

    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(spec.timing_path(), text).map_err(io_err(&spec.timing_path()))?;
    Ok(summary)
}

/// Re-check a state log against its scene with the exhaustive oracle.
pub fn replay_log(scene: &Path, log: &Path, overrides: &RunOverrides) -> Result<ReplayReport, RunError> {
    let mut s = Scene::load(scene)?;
    overrides.apply(&mut s)?;
    Ok(replay(s, &read_log(log)?)?)
}

#[derive(Debug, Clone)]
pub struct ServeSpec {
    pub scene: PathBuf,
    pub haptic_port: u16,
    pub ui_port: u16,
    pub out_dir: PathBuf,
    pub overrides: RunOverrides,
    /// Run until interrupted when unset.
    pub duration: Option<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServeSummary {
    pub steps: u64,
    pub commands: u64,
    pub command_errors: u64,
    pub step_errors: u64,
    pub trajectories_saved: u64,
    pub servo: TimingReport,
}

/// Addresses a running serve loop is listening on.
#[derive(Debug, Clone, Copy)]
pub struct ServeAddrs {
    pub haptic: SocketAddr,
    pub ui: SocketAddr,
}

/// Live system: servo, protocol server and UI bridge, with the stylus driven
/// by the view's teleop commands. `ready` is called once both sockets are bound.
pub fn serve(spec: &ServeSpec, stop: &AtomicBool, ready: impl FnOnce(ServeAddrs)) -> Result<ServeSummary, RunError> {
    let mut scene = Scene::load(&spec.scene)?;
    spec.overrides.apply(&mut scene)?;
    std::fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;
    let period = Duration::from_secs_f64(1.0 / scene.config.scene_rate_hz);

    let live = LiveServo::start(spec.haptic_port)?;
    let shared = live.handle.shared.clone();
    let result = (|| -> Result<_, RunError> {
        let zero = shared.clone();
        let bridge = BridgeServer::bind(
            ("127.0.0.1", spec.ui_port),
            Some(live.cell.clone()),
            Some(Arc::new(move || zero.request_zero_force())),
        )?;
        let mut client = HapticClient::connect(live.addr, CLIENT_TIMEOUT)?;
        let log = StateLog::create(&spec.out_dir.join("state_log.jsonl"))?;
        let mut session = Session::new(scene).with_log(log);
        ready(ServeAddrs {
            haptic: live.addr,
            ui: bridge.local_addr(),
        });

        let mut summary = ServeSummary::default();
        let start = Instant::now();
        let mut seq = 0u64;
        let mut next = start;
        while !stop.load(Ordering::Acquire) && spec.duration.is_none_or(|d| start.elapsed() < d) {
            let mut connected = Vec::new();
            for ev in bridge.poll() {
                match ev {
                    BridgeEvent::Connected(id) => connected.push(id),
                    BridgeEvent::Disconnected(_) => session.set_clutch(false),
                    BridgeEvent::Command(_, cmd) => {
                        summary.commands += 1;
                        match bridge::apply_command(&mut session, &cmd) {
                            Ok(Some(waypoints)) => {
                                save_trajectory(&waypoints, &spec.out_dir.join("trajectory.json"))?;
                                summary.trajectories_saved += 1;
                            }
                            Ok(None) => {}
                            Err(e) => {
                                summary.command_errors += 1;
                                log::warn!("bridge command {cmd:?} failed: {e}");
                            }
                        }
                    }
                }
            }

            let t_ms = start.elapsed().as_secs_f64() * 1e3;
            let report = match session.step(&mut client, t_ms) {
                Ok(r) => Some(r),
                Err(e) => {
                    summary.step_errors += 1;
                    log::warn!("scene step failed: {e}");
                    None
                }
            };
            summary.steps += 1;
            seq += 1;

            let contact = report
                .as_ref()
                .filter(|r| r.outcome == StepOutcome::RejectedCollision)
                .and_then(|_| session.selected().map(|e| e.name.clone()));
            for id in connected {
                let full = bridge::scene_state(&session, seq, true, contact.as_deref());
                bridge.send_to(id, &ServerMessage::SceneState(full));
            }
            bridge.broadcast(&ServerMessage::SceneState(bridge::scene_state(&session, seq, false, contact.as_deref())));
            if let Some(r) = &report {
                bridge.broadcast(&ServerMessage::stylus(&r.stylus));
                bridge.broadcast(&ServerMessage::Witness {
                    entity: session.selected().map(|e| e.name.clone()),
                    witness: r.witness,
                    in_contact: contact.is_some(),
                });
            }
            let model = shared.model.latest();
            bridge.broadcast(&ServerMessage::force(&shared.force.latest(), model.active));
            bridge.broadcast(&ServerMessage::recording(&session));

            next += period;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            } else {
                next = now;
            }
        }
        let _ = client.set_force_model(&ConstraintModel::inactive());
        session.flush_log()?;
        bridge.shutdown();
        Ok(summary)
    })();
    shared.request_zero_force();
    let servo = live.handle.stop();
    let mut summary = result?;
    summary.servo = servo;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub baseline: TimingReport,
    pub stalled: Option<TimingReport>,
    pub stall_ms: f64,
    /// Stalled p99 period over baseline p99 period.
    pub p99_ratio: Option<f64>,
}

impl BenchReport {
    pub const RATE_MIN_HZ: f64 = 990.0;
    pub const MISSED_MAX: f64 = 1e-3;
    pub const P99_RATIO_MAX: f64 = 1.05;

    pub fn rate_ok(&self) -> bool {
        self.baseline.achieved_hz >= Self::RATE_MIN_HZ && self.baseline.missed_fraction() < Self::MISSED_MAX
    }

    pub fn non_blocking_ok(&self) -> Option<bool> {
        self.p99_ratio.map(|r| r <= Self::P99_RATIO_MAX)
    }
}

/// Stylus bobbing through a plane at z = 0 so the servo alternates between
/// free space and contact.
fn contact_switching_script(duration: Duration) -> Script {
    let end = duration.as_secs_f64() * 1e3;
    let frames = (end / 50.0).ceil() as usize + 1;
    let keyframes = (0..frames)
        .map(|i| {
            let z = if i % 2 == 0 { 5.0 } else { -5.0 };
            Keyframe::at(i as f64 * 50.0, Vec3::new(0.0, 0.0, z))
        })
        .collect();
    Script::new(keyframes).expect("keyframes are ordered and non-empty")
}

/// One servo run with a protocol client polling and switching the force
/// model. With `stall`, the client sends half a frame halfway through and
/// then goes silent for the stall before finishing it.
pub fn bench_run(duration: Duration, stall: Option<Duration>) -> Result<TimingReport, RunError> {
    let server = HapticServer::bind(("127.0.0.1", 0))?;
    let addr = server.local_addr().map_err(ProtocolError::Io)?;
    let source = DeviceSource::Scripted(contact_switching_script(duration));
    let handle = ServoLoop::new(ServoConfig::default(), source).with_server(server).spawn(Some(duration));
    let shared = handle.shared.clone();

    let client = std::thread::spawn(move || -> Result<(), ProtocolError> {
        let mut c = HapticClient::connect(addr, CLIENT_TIMEOUT)?;
        let contact = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), ForceLaw::default());
        let start = Instant::now();
        let stall_at = stall.map(|s| duration.saturating_sub(s) / 2);
        let mut k = 0u64;
        while start.elapsed() < duration && !shared.stop_requested() {
            if let (Some(at), Some(s)) = (stall_at, stall) {
                if start.elapsed() >= at {
                    let frame = encode_frame(&Message::Ping { seq: u64::MAX });
                    let (head, tail) = frame.split_at(frame.len() / 2);
                    c.send_raw(head)?;
                    std::thread::sleep(s);
                    c.send_raw(tail)?;
                    return drain(&mut c, start, duration);
                }
            }
            c.get_pose()?;
            let model = if (k / 10).is_multiple_of(2) { contact } else { ConstraintModel::inactive() };
            c.set_force_model(&model)?;
            k += 1;
            std::thread::sleep(Duration::from_millis(2));
        }
        Ok(())
    });
    let report = handle.join();
    match client.join() {
        Ok(Ok(())) | Ok(Err(ProtocolError::ServerUnresponsive)) => {}
        Ok(Err(e)) => log::debug!("bench client ended: {e}"),
        Err(_) => log::warn!("bench client panicked"),
    }
    Ok(report)
}

fn drain(c: &mut HapticClient, start: Instant, duration: Duration) -> Result<(), ProtocolError> {
    while start.elapsed() < duration {
        c.get_pose()?;
        std::thread::sleep(Duration::from_millis(2));
    }
    Ok(())
}

/// Baseline run, then (with `stall`) the same run with a client stall.
pub fn bench(duration: Duration, stall: Option<Duration>) -> Result<BenchReport, RunError> {
    if duration.is_zero() {
        return Err(RunError::Usage("bench duration must be greater than zero".into()));
    }
    let baseline = bench_run(duration, None)?;
    let stalled = stall.map(|s| bench_run(duration, Some(s))).transpose()?;
    let p99_ratio = stalled
        .as_ref()
        .filter(|_| baseline.p99_period_us > 0.0)
        .map(|s| s.p99_period_us / baseline.p99_period_us);
    Ok(BenchReport {
        baseline,
        stalled,
        stall_ms: stall.map_or(0.0, |s| s.as_secs_f64() * 1e3),
        p99_ratio,
    })
}
