//! The 1 kHz haptic servo: force laws, the per-tick update, and the fixed-rate runner.
//!
//! Between session updates the contact is frozen as a plane constraint in the
//! device frame (anchor point + outward normal). Each tick measures how far the
//! stylus has pushed past the plane and renders the configured force law.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::device::{clamp_force, ContinuousForceMonitor, Device, DeviceLimits, DeviceSource, ForceCommand, Snapshot, StylusState};
use crate::geometry::Vec3;
use crate::protocol::HapticServer;

pub const DEFAULT_RATE_HZ: f64 = 1000.0;
pub const DEFAULT_F0_N: f64 = 2.0;
pub const DEFAULT_K_N_PER_MM: f64 = 0.4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServoError {
    #[error("invalid force law: {0}")]
    InvalidLaw(String),
    #[error("penetration must be finite and non-negative, got {0}")]
    InvalidPenetration(f64),
    #[error("active constraint needs a unit normal")]
    NonUnitNormal,
}

/// Force-return class: constant boundary cue, or proportional to penetration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ForceLaw {
    Constant { f0_n: f64 },
    Variable { k_n_per_mm: f64, mass_factor: f64 },
}

impl Default for ForceLaw {
    fn default() -> Self {
        ForceLaw::Variable {
            k_n_per_mm: DEFAULT_K_N_PER_MM,
            mass_factor: 1.0,
        }
    }
}

impl ForceLaw {
    pub fn constant_default() -> Self {
        ForceLaw::Constant { f0_n: DEFAULT_F0_N }
    }

    pub fn validate(&self) -> Result<(), ServoError> {
        match *self {
            ForceLaw::Constant { f0_n } if !(f0_n > 0.0 && f0_n.is_finite()) => {
                Err(ServoError::InvalidLaw(format!("F0 must be positive, got {f0_n}")))
            }
            ForceLaw::Variable { k_n_per_mm, mass_factor }
                if !(k_n_per_mm > 0.0 && k_n_per_mm.is_finite() && mass_factor > 0.0 && mass_factor.is_finite()) =>
            {
                Err(ServoError::InvalidLaw(format!("k and mass factor must be positive, got k={k_n_per_mm}, mass={mass_factor}")))
            }
            _ => Ok(()),
        }
    }
}

/// Plane constraint rendered by the servo, expressed in the device frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintModel {
    pub active: bool,
    #[serde(with = "crate::serde_vec3")]
    pub anchor_mm: Vec3,
    /// Points toward the free side.
    #[serde(with = "crate::serde_vec3")]
    pub normal: Vec3,
    pub law: ForceLaw,
}

impl Default for ConstraintModel {
    fn default() -> Self {
        ConstraintModel::inactive()
    }
}

impl ConstraintModel {
    pub fn inactive() -> Self {
        ConstraintModel {
            active: false,
            anchor_mm: Vec3::zeros(),
            normal: Vec3::z(),
            law: ForceLaw::default(),
        }
    }

    pub fn plane(anchor_mm: Vec3, normal: Vec3, law: ForceLaw) -> Self {
        ConstraintModel {
            active: true,
            anchor_mm,
            normal,
            law,
        }
    }

    pub fn validate(&self) -> Result<(), ServoError> {
        if self.active {
            if !self.anchor_mm.iter().all(|c| c.is_finite()) || (self.normal.norm() - 1.0).abs() > 1e-9 {
                return Err(ServoError::NonUnitNormal);
            }
            self.law.validate()?;
        }
        Ok(())
    }

    /// Signed depth of `position` behind the plane, floored at zero.
    pub fn penetration(&self, position: &Vec3) -> f64 {
        (self.anchor_mm - position).dot(&self.normal).max(0.0)
    }
}

fn unclamped_force(model: &ConstraintModel, penetration_mm: f64) -> Result<Vec3, ServoError> {
    if !(penetration_mm >= 0.0) || !penetration_mm.is_finite() {
        return Err(ServoError::InvalidPenetration(penetration_mm));
    }
    model.validate()?;
    if !model.active || penetration_mm == 0.0 {
        return Ok(Vec3::zeros());
    }
    Ok(match model.law {
        ForceLaw::Constant { f0_n } => model.normal * f0_n,
        ForceLaw::Variable { k_n_per_mm, mass_factor } => model.normal * (k_n_per_mm * penetration_mm * mass_factor),
    })
}

/// Force for a given penetration depth, limited to the device peak force.
pub fn force_law(model: &ConstraintModel, penetration_mm: f64) -> Result<Vec3, ServoError> {
    let raw = unclamped_force(model, penetration_mm)?;
    Ok(clamp_force(&raw).map(|c| c.force).unwrap_or_else(|_| Vec3::zeros()))
}

/// One servo update: a pure function of the latest stylus sample and model.
///
/// An invalid model renders zero force.
pub fn servo_tick(stylus: &StylusState, model: &ConstraintModel) -> ForceCommand {
    let pen = model.penetration(&stylus.pose.position);
    let raw = unclamped_force(model, pen).unwrap_or_else(|_| Vec3::zeros());
    let mut cmd = clamp_force(&raw).unwrap_or_else(|_| ForceCommand::zero());
    cmd.seq = stylus.seq;
    cmd
}

/// Try to move the calling thread to SCHED_FIFO. Returns whether it took.
pub fn request_realtime(priority: i32) -> bool {
    #[cfg(target_os = "linux")]
    unsafe {
        let param = libc::sched_param { sched_priority: priority };
        libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) == 0
    }
    #[cfg(not(target_os = "linux"))]
    {
        let _ = priority;
        false
    }
}

#[derive(Debug, Clone)]
pub struct ServoConfig {
    pub rate_hz: f64,
    /// Ask for SCHED_FIFO on the servo thread; falls back silently.
    pub realtime: bool,
    pub limits: DeviceLimits,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            rate_hz: DEFAULT_RATE_HZ,
            realtime: std::env::var_os("VWC_NO_REALTIME").is_none(),
            limits: DeviceLimits::default(),
        }
    }
}

/// Timing summary of a servo run. The first four fields are the stable JSON report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub ticks: u64,
    pub missed: u64,
    pub mean_period_us: f64,
    pub p99_period_us: f64,
    pub max_period_us: f64,
    pub achieved_hz: f64,
    pub p99_tick_latency_us: f64,
    pub realtime: bool,
    /// Rate or deadline target not met on this host.
    pub degraded: bool,
    pub continuous_force_warnings: u64,
}

impl TimingReport {
    pub fn missed_fraction(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.missed as f64 / self.ticks as f64
        }
    }
}

/// 1 µs-bucket histogram; values past the range land in the last bucket.
#[derive(Debug, Clone)]
pub struct MicrosHistogram {
    buckets: Vec<u32>,
    count: u64,
    sum: f64,
    max: f64,
}

impl MicrosHistogram {
    pub fn new(range_us: usize) -> Self {
        MicrosHistogram {
            buckets: vec![0; range_us + 1],
            count: 0,
            sum: 0.0,
            max: 0.0,
        }
    }

    pub fn record(&mut self, us: f64) {
        let b = (us.max(0.0).round() as usize).min(self.buckets.len() - 1);
        self.buckets[b] += 1;
        self.count += 1;
        self.sum += us;
        self.max = self.max.max(us);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Smallest bucket value with at least `q` of the samples at or below it.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let target = ((q * self.count as f64).ceil() as u64).max(1);
        let mut acc = 0u64;
        for (us, &n) in self.buckets.iter().enumerate() {
            acc += n as u64;
            if acc >= target {
                return if us == self.buckets.len() - 1 { self.max } else { us as f64 };
            }
        }
        self.max
    }
}

/// State the servo publishes for other contexts. Never locked by the servo.
#[derive(Debug)]
pub struct ServoShared {
    pub stylus: Snapshot<StylusState>,
    pub force: Snapshot<ForceCommand>,
    pub model: Snapshot<ConstraintModel>,
    pub ticks: AtomicU64,
    stop: AtomicBool,
    zero: AtomicBool,
}

impl Default for ServoShared {
    fn default() -> Self {
        ServoShared {
            stylus: Snapshot::new(StylusState::default()),
            force: Snapshot::new(ForceCommand::zero()),
            model: Snapshot::new(ConstraintModel::inactive()),
            ticks: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            zero: AtomicBool::new(false),
        }
    }
}

impl ServoShared {
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::Release);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::Acquire)
    }

    /// Ask the servo to drop its model to inactive on its next tick.
    pub fn request_zero_force(&self) {
        self.zero.store(true, Ordering::Release);
    }

    /// Spin-sleep until at least `n` more ticks have run, or `timeout` passes.
    pub fn wait_ticks(&self, n: u64, timeout: Duration) -> bool {
        let target = self.ticks.load(Ordering::Acquire) + n;
        let deadline = Instant::now() + timeout;
        while self.ticks.load(Ordering::Acquire) < target {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
        true
    }
}

/// The servo context: device sampling, force update and the protocol server.
pub struct ServoLoop {
    config: ServoConfig,
    device: Device,
    source: DeviceSource,
    model: ConstraintModel,
    server: Option<HapticServer>,
    monitor: ContinuousForceMonitor,
    shared: Arc<ServoShared>,
}

impl ServoLoop {
    pub fn new(config: ServoConfig, source: DeviceSource) -> Self {
        let per_second = config.rate_hz.round().max(1.0) as usize;
        ServoLoop {
            device: Device::new(config.limits),
            monitor: ContinuousForceMonitor::new(per_second, config.limits.force_continuous_n),
            config,
            source,
            model: ConstraintModel::inactive(),
            server: None,
            shared: Arc::new(ServoShared::default()),
        }
    }

    pub fn with_server(mut self, server: HapticServer) -> Self {
        self.server = Some(server);
        self
    }

    pub fn shared(&self) -> Arc<ServoShared> {
        self.shared.clone()
    }

    pub fn model(&self) -> &ConstraintModel {
        &self.model
    }

    pub fn set_model(&mut self, model: ConstraintModel) {
        self.model = model;
    }

    /// One period's work: sample, render, publish, then serve pending requests.
    pub fn tick(&mut self, t_ms: f64) -> ForceCommand {
        if self.shared.zero.swap(false, Ordering::AcqRel) {
            self.model = ConstraintModel::inactive();
        }
        let raw = self.source.read(t_ms);
        let stylus = self.device.sample(&raw.pose, raw.button, t_ms);
        self.shared.stylus.publish(stylus);
        let cmd = servo_tick(&stylus, &self.model);
        self.shared.force.publish(cmd);
        self.monitor.push(cmd.force.norm());
        if let Some(server) = self.server.as_mut() {
            server.serve_step(&stylus, &mut self.model);
        }
        self.shared.model.publish(self.model);
        self.shared.ticks.fetch_add(1, Ordering::AcqRel);
        cmd
    }

    /// Run at the configured rate for `duration` (or until stopped) on the
    /// current thread. Ticks run on absolute deadlines; a tick that finishes
    /// after its slot ends counts as missed, and slots overrun entirely are
    /// skipped and counted as missed too.
    pub fn run(&mut self, duration: Option<Duration>) -> TimingReport {
        let realtime = self.config.realtime && request_realtime(80);
        let period = Duration::from_secs_f64(1.0 / self.config.rate_hz);
        let period_ms = period.as_secs_f64() * 1e3;
        let mut periods = MicrosHistogram::new(20_000);
        let mut latency = MicrosHistogram::new(20_000);
        let mut missed = 0u64;
        let mut ticks = 0u64;

        if duration == Some(Duration::ZERO) {
            return TimingReport {
                realtime,
                ..TimingReport::default()
            };
        }

        let start = Instant::now();
        let end = duration.map(|d| start + d);
        let mut slot: u64 = 0;
        let mut last_start: Option<Instant> = None;
        loop {
            let deadline = start + period.mul_f64(slot as f64);
            if end.is_some_and(|e| deadline >= e) || self.shared.stop_requested() {
                break;
            }
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            let tick_start = Instant::now();
            if let Some(prev) = last_start {
                periods.record((tick_start - prev).as_secs_f64() * 1e6);
            }
            last_start = Some(tick_start);

            self.tick(slot as f64 * period_ms);
            ticks += 1;

            let done = Instant::now();
            latency.record((done - tick_start).as_secs_f64() * 1e6);
            let slot_end = deadline + period;
            if done > slot_end {
                missed += 1;
                // Skip slots that have already fully elapsed rather than bursting.
                let behind = ((done - start).as_secs_f64() / period.as_secs_f64()).floor() as u64;
                if behind > slot + 1 {
                    missed += behind - slot - 1;
                    slot = behind;
                    continue;
                }
            }
            slot += 1;
        }
        let elapsed = start.elapsed().as_secs_f64();

        // Fail safe: the device is left with zero force.
        self.model = ConstraintModel::inactive();
        self.shared.force.publish(ForceCommand::zero());
        self.shared.model.publish(self.model);

        let achieved_hz = if elapsed > 0.0 { ticks as f64 / elapsed } else { 0.0 };
        let mut report = TimingReport {
            ticks,
            missed,
            mean_period_us: periods.mean(),
            p99_period_us: periods.quantile(0.99),
            max_period_us: periods.max(),
            achieved_hz,
            p99_tick_latency_us: latency.quantile(0.99),
            realtime,
            degraded: false,
            continuous_force_warnings: self.monitor.warnings(),
        };
        report.degraded = ticks > 0 && (achieved_hz < 0.99 * self.config.rate_hz || report.missed_fraction() > 1e-3);
        if report.degraded {
            log::warn!("servo could not hold {} Hz on this host: {:?}", self.config.rate_hz, report);
        }
        report
    }

    /// Move the loop to a dedicated thread.
    pub fn spawn(mut self, duration: Option<Duration>) -> ServoHandle {
        let shared = self.shared.clone();
        let join = std::thread::Builder::new()
            .name("haptic-servo".into())
            .spawn(move || self.run(duration))
            .expect("spawn servo thread");
        ServoHandle { shared, join }
    }
}

pub struct ServoHandle {
    pub shared: Arc<ServoShared>,
    join: JoinHandle<TimingReport>,
}

impl ServoHandle {
    pub fn stop(self) -> TimingReport {
        self.shared.request_stop();
        self.join()
    }

    pub fn join(self) -> TimingReport {
        self.join.join().expect("servo thread panicked")
    }
}

/// Convenience wrapper: run a servo with `source` at `rate_hz` for `duration`.
pub fn run_servo(rate_hz: f64, duration: Duration, source: DeviceSource, server: Option<HapticServer>) -> TimingReport {
    let config = ServoConfig {
        rate_hz,
        ..ServoConfig::default()
    };
    let mut servo = ServoLoop::new(config, source);
    if let Some(s) = server {
        servo = servo.with_server(s);
    }
    servo.run(Some(duration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Keyframe, Script};
    use crate::geometry::Pose;

    fn stylus_at(p: Vec3, seq: u64) -> StylusState {
        StylusState {
            pose: Pose::from_translation(p),
            button: false,
            seq,
            timestamp_ms: seq as f64,
        }
    }

    fn variable(k: f64) -> ForceLaw {
        ForceLaw::Variable { k_n_per_mm: k, mass_factor: 1.0 }
    }

    #[test]
    fn law_examples() {
        let n = Vec3::z();
        let c = ConstraintModel::plane(Vec3::zeros(), n, ForceLaw::Constant { f0_n: 2.0 });
        assert_eq!(force_law(&c, 0.1).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(force_law(&ConstraintModel::inactive(), 3.0).unwrap(), Vec3::zeros());
        let v = ConstraintModel::plane(Vec3::zeros(), n, variable(0.4));
        assert!((force_law(&v, 3.0).unwrap() - Vec3::new(0.0, 0.0, 1.2)).norm() < 1e-12);
        assert!((force_law(&v, 20.0).unwrap() - Vec3::new(0.0, 0.0, 6.4)).norm() < 1e-12);
        assert_eq!(force_law(&v, 0.0).unwrap(), Vec3::zeros());
    }

    #[test]
    fn law_rejects_bad_parameters() {
        let bad = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(-1.0));
        assert!(matches!(force_law(&bad, 1.0), Err(ServoError::InvalidLaw(_))));
        let bad = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), ForceLaw::Constant { f0_n: 0.0 });
        assert!(force_law(&bad, 1.0).is_err());
        let v = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(1.0));
        assert!(matches!(force_law(&v, -1.0), Err(ServoError::InvalidPenetration(_))));
        assert!(serde_json::from_str::<ForceLaw>(r#"{"class":"dynamic"}"#).is_err());
    }

    #[test]
    fn tick_examples() {
        let model = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(1.0));
        assert_eq!(servo_tick(&stylus_at(Vec3::new(0.0, 0.0, 3.0), 1), &model).force, Vec3::zeros());
        let cmd = servo_tick(&stylus_at(Vec3::new(5.0, 0.0, -2.0), 7), &model);
        assert!((cmd.force - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert_eq!(cmd.seq, 7);
        assert!(!cmd.clamped);
        let deep = servo_tick(&stylus_at(Vec3::new(0.0, 0.0, -50.0), 8), &model);
        assert!(deep.clamped && (deep.force.norm() - 6.4).abs() < 1e-12);
    }

    #[test]
    fn model_swap_applies_on_next_tick() {
        let (source, cell) = DeviceSource::external();
        cell.store(crate::device::RawInput {
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, -2.0)),
            button: false,
        });
        let mut servo = ServoLoop::new(ServoConfig::default(), source);
        assert_eq!(servo.tick(0.0).force, Vec3::zeros());
        servo.set_model(ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(1.0)));
        assert!((servo.tick(1.0).force.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coherence_along_normal() {
        let var = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(0.4));
        let con = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), ForceLaw::Constant { f0_n: 2.0 });
        let mut last = 0.0;
        for i in 1..=15 {
            let s = stylus_at(Vec3::new(0.0, 0.0, -(i as f64)), i);
            let f = servo_tick(&s, &var).force.norm();
            assert!(f > last);
            last = f;
            assert!((servo_tick(&s, &con).force.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let models = [
            ConstraintModel::inactive(),
            ConstraintModel::plane(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.6, 0.0, 0.8), variable(0.37)),
            ConstraintModel::plane(Vec3::zeros(), Vec3::x(), ForceLaw::Constant { f0_n: 1.3 }),
        ];
        let stream: Vec<(StylusState, ConstraintModel)> = (0..500)
            .map(|i| {
                let t = i as f64 * 0.01;
                (stylus_at(Vec3::new(t.sin() * 9.0, t.cos() * 7.0, -t), i), models[(i / 37) as usize % 3])
            })
            .collect();
        let first: Vec<ForceCommand> = stream.iter().map(|(s, m)| servo_tick(s, m)).collect();
        let second: Vec<ForceCommand> = stream.iter().map(|(s, m)| servo_tick(s, m)).collect();
        assert!(first.iter().zip(&second).all(|(a, b)| a.force.iter().zip(b.force.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
    }

    #[test]
    fn zero_duration_is_empty() {
        let src = DeviceSource::Scripted(Script::new(vec![Keyframe::at(0.0, Vec3::zeros())]).unwrap());
        let r = run_servo(1000.0, Duration::ZERO, src, None);
        assert_eq!(r.ticks, 0);
        assert_eq!(r.missed, 0);
    }

    #[test]
    fn short_run_reports_rate() {
        let src = DeviceSource::Scripted(Script::new(vec![Keyframe::at(0.0, Vec3::zeros())]).unwrap());
        let r = run_servo(1000.0, Duration::from_millis(300), src, None);
        assert!(r.ticks >= 250 && r.ticks <= 301, "{r:?}");
        assert!(r.mean_period_us > 500.0);
    }

    #[test]
    fn zero_request_clears_model_next_tick() {
        let (src, cell) = DeviceSource::external();
        cell.store(crate::device::RawInput {
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, -5.0)),
            button: false,
        });
        let mut servo = ServoLoop::new(ServoConfig::default(), src);
        servo.set_model(ConstraintModel::plane(Vec3::zeros(), Vec3::z(), variable(0.5)));
        assert!(servo.tick(0.0).force.norm() > 0.0);
        servo.shared().request_zero_force();
        assert_eq!(servo.tick(1.0).force, Vec3::zeros());
        assert!(!servo.model().active);
    }

    #[test]
    fn histogram_quantiles() {
        let mut h = MicrosHistogram::new(100);
        for v in 1..=100 {
            h.record(v as f64);
        }
        assert_eq!(h.quantile(0.99), 99.0);
        assert_eq!(h.quantile(0.5), 50.0);
        h.record(5000.0);
        assert_eq!(h.max(), 5000.0);
        assert_eq!(h.quantile(1.0), 5000.0);
    }
}
