//! Virtual Phantom Desktop: a 6-DOF sensed, 3-DOF force stylus.
//!
//! Positions are clamped to the device workspace and quantized to the
//! position resolution; orientation passes through unquantized. Forces are
//! capped at the peak rating; the continuous rating is only monitored.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use crossbeam::atomic::AtomicCell;
use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("force command has a non-finite component")]
    NonFiniteForce,
    #[error("device script is empty")]
    EmptyScript,
    #[error("device script keyframes must have non-decreasing t_ms (keyframe {0})")]
    UnorderedScript(usize),
    #[error("cannot read device script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("device script {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
}

/// Hardware envelope of the simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLimits {
    /// Full workspace box size, mm, centered on the device origin.
    #[serde(with = "crate::serde_vec3")]
    pub workspace_mm: Vec3,
    pub resolution_mm: f64,
    pub force_peak_n: f64,
    pub force_continuous_n: f64,
}

impl DeviceLimits {
    pub const PHANTOM_DESKTOP: DeviceLimits = DeviceLimits {
        workspace_mm: Vec3::new(160.0, 130.0, 130.0),
        resolution_mm: 0.02,
        force_peak_n: 6.4,
        force_continuous_n: 1.4,
    };

    pub fn half_extents(&self) -> Vec3 {
        self.workspace_mm / 2.0
    }

    /// Clamp into the workspace box, then round each component to the
    /// nearest resolution multiple (ties away from zero).
    pub fn quantize_position(&self, p: &Vec3) -> Vec3 {
        let h = self.half_extents();
        Vec3::from_fn(|i, _| {
            let clamped = p[i].clamp(-h[i], h[i]);
            (clamped / self.resolution_mm).round() * self.resolution_mm
        })
    }

    pub fn clamp_force(&self, f: &Vec3) -> Result<ForceCommand, DeviceError> {
        clamp_force_to(f, self.force_peak_n)
    }
}

impl Default for DeviceLimits {
    fn default() -> Self {
        DeviceLimits::PHANTOM_DESKTOP
    }
}

/// One sensed sample of the stylus, shared between the loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylusState {
    pub pose: Pose,
    pub button: bool,
    pub seq: u64,
    pub timestamp_ms: f64,
}

impl Default for StylusState {
    fn default() -> Self {
        StylusState {
            pose: Pose::identity(),
            button: false,
            seq: 0,
            timestamp_ms: 0.0,
        }
    }
}

/// Force output of the servo loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceCommand {
    #[serde(with = "crate::serde_vec3")]
    pub force: Vec3,
    pub clamped: bool,
    pub seq: u64,
}

impl ForceCommand {
    pub fn zero() -> Self {
        ForceCommand {
            force: Vec3::zeros(),
            clamped: false,
            seq: 0,
        }
    }
}

/// Rescale `f` to magnitude `peak` when it exceeds it, preserving direction.
pub fn clamp_force_to(f: &Vec3, peak: f64) -> Result<ForceCommand, DeviceError> {
    if !f.iter().all(|c| c.is_finite()) {
        return Err(DeviceError::NonFiniteForce);
    }
    let n = f.norm();
    let (force, clamped) = if n > peak { (f * (peak / n), true) } else { (*f, false) };
    Ok(ForceCommand { force, clamped, seq: 0 })
}

/// Peak-limit a force with the Phantom Desktop rating.
pub fn clamp_force(f: &Vec3) -> Result<ForceCommand, DeviceError> {
    clamp_force_to(f, DeviceLimits::PHANTOM_DESKTOP.force_peak_n)
}

/// Sampler turning raw poses into quantized [`StylusState`]s with increasing `seq`.
#[derive(Debug, Clone)]
pub struct Device {
    limits: DeviceLimits,
    seq: u64,
}

impl Device {
    pub fn new(limits: DeviceLimits) -> Self {
        Device { limits, seq: 0 }
    }

    pub fn limits(&self) -> &DeviceLimits {
        &self.limits
    }

    pub fn sample(&mut self, raw: &Pose, button: bool, timestamp_ms: f64) -> StylusState {
        self.seq += 1;
        StylusState {
            pose: Pose::new(self.limits.quantize_position(&raw.position), raw.orientation),
            button,
            seq: self.seq,
            timestamp_ms,
        }
    }
}

impl Default for Device {
    fn default() -> Self {
        Device::new(DeviceLimits::default())
    }
}

/// One entry of a device script file.
///
/// `clutch` is optional: when present it sets the session clutch at that
/// keyframe, letting scripted runs exercise re-indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_ms: f64,
    pub position_mm: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quat_wxyz: [f64; 4],
    #[serde(default)]
    pub button: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutch: Option<bool>,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Keyframe {
    pub fn at(t_ms: f64, position: Vec3) -> Self {
        Keyframe {
            t_ms,
            position_mm: [position.x, position.y, position.z],
            quat_wxyz: identity_wxyz(),
            button: false,
            clutch: None,
        }
    }

    fn orientation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.quat_wxyz;
        UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z))
    }
}

/// Raw device input at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct RawInput {
    pub pose: Pose,
    pub button: bool,
}


/// Keyframed stylus trajectory: linear in position, slerp in orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    keyframes: Vec<Keyframe>,
}

impl Script {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, DeviceError> {
        if keyframes.is_empty() {
            return Err(DeviceError::EmptyScript);
        }
        if let Some(i) = keyframes.windows(2).position(|w| !(w[1].t_ms >= w[0].t_ms)) {
            return Err(DeviceError::UnorderedScript(i + 1));
        }
        Ok(Script { keyframes })
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let keyframes: Vec<Keyframe> = serde_path_to_error::deserialize(de).map_err(|source| DeviceError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        Script::new(keyframes)
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn end_ms(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.t_ms)
    }

    /// Index of the last keyframe with `t_ms <= t`, or `None` before the first.
    fn last_at_or_before(&self, t: f64) -> Option<usize> {
        let n = self.keyframes.partition_point(|k| k.t_ms <= t);
        n.checked_sub(1)
    }

    /// Raw pose and button at time `t`; held constant outside the script range.
    pub fn drive(&self, t_ms: f64) -> RawInput {
        let kf = &self.keyframes;
        let Some(i) = self.last_at_or_before(t_ms) else {
            return raw_of(&kf[0]);
        };
        if i + 1 >= kf.len() {
            return raw_of(&kf[i]);
        }
        let (a, b) = (&kf[i], &kf[i + 1]);
        let span = b.t_ms - a.t_ms;
        let s = if span > 0.0 { (t_ms - a.t_ms) / span } else { 1.0 };
        let pa = Vec3::from(a.position_mm);
        let pb = Vec3::from(b.position_mm);
        let qa = a.orientation();
        let qb = b.orientation();
        RawInput {
            pose: Pose::new(pa + (pb - pa) * s, qa.try_slerp(&qb, s, 1e-12).unwrap_or(qa)),
            button: a.button,
        }
    }

    /// Clutch changes scheduled in `(from, to]`, in order.
    pub fn clutch_events(&self, from_ms: f64, to_ms: f64) -> impl Iterator<Item = bool> + '_ {
        self.keyframes
            .iter()
            .filter(move |k| k.t_ms > from_ms && k.t_ms <= to_ms)
            .filter_map(|k| k.clutch)
    }
}

fn raw_of(k: &Keyframe) -> RawInput {
    RawInput {
        pose: Pose::new(Vec3::from(k.position_mm), k.orientation()),
        button: k.button,
    }
}

/// Where the servo gets raw stylus input from.
#[derive(Debug, Clone)]
pub enum DeviceSource {
    /// Keyframed script evaluated at the servo's clock.
    Scripted(Script),
    /// Latest pose pushed by an external driver (UI teleoperation, scripted runs).
    External(Arc<AtomicCell<RawInput>>),
}

impl DeviceSource {
    pub fn external() -> (DeviceSource, Arc<AtomicCell<RawInput>>) {
        let cell = Arc::new(AtomicCell::new(RawInput::default()));
        (DeviceSource::External(cell.clone()), cell)
    }

    pub fn read(&self, t_ms: f64) -> RawInput {
        match self {
            DeviceSource::Scripted(s) => s.drive(t_ms),
            DeviceSource::External(cell) => cell.load(),
        }
    }
}

/// Latest-value slot: the writer never waits, the reader always sees a complete value.
#[derive(Debug)]
pub struct Snapshot<T: Copy> {
    cell: AtomicCell<T>,
}

impl<T: Copy> Snapshot<T> {
    pub fn new(v: T) -> Self {
        Snapshot { cell: AtomicCell::new(v) }
    }

    pub fn publish(&self, v: T) {
        self.cell.store(v)
    }

    pub fn latest(&self) -> T {
        self.cell.load()
    }
}

/// Rolling one-second mean of |f| against the continuous force rating.
#[derive(Debug, Clone)]
pub struct ContinuousForceMonitor {
    window: VecDeque<f64>,
    capacity: usize,
    sum: f64,
    rating: f64,
    warnings: u64,
    over: bool,
}

impl ContinuousForceMonitor {
    /// `samples_per_second` sets the window length (1000 for a 1 kHz servo).
    pub fn new(samples_per_second: usize, rating_n: f64) -> Self {
        ContinuousForceMonitor {
            window: VecDeque::with_capacity(samples_per_second),
            capacity: samples_per_second.max(1),
            sum: 0.0,
            rating: rating_n,
            warnings: 0,
            over: false,
        }
    }

    pub fn push(&mut self, magnitude: f64) {
        if self.window.len() == self.capacity {
            self.sum -= self.window.pop_front().unwrap_or(0.0);
        }
        self.window.push_back(magnitude);
        self.sum += magnitude;
        let over = self.mean() > self.rating;
        // Count each excursion once, on its rising edge.
        if over && !self.over {
            self.warnings += 1;
        }
        self.over = over;
    }

    pub fn mean(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.sum / self.window.len() as f64
        }
    }

    pub fn warnings(&self) -> u64 {
        self.warnings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn at(x: f64) -> Pose {
        Pose::from_translation(Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn sample_quantizes_and_clamps() {
        let mut d = Device::default();
        assert_eq!(d.sample(&at(0.0), false, 0.0).pose.position, Vec3::zeros());
        let s = d.sample(&at(0.031), false, 1.0);
        assert!((s.pose.position.x - 0.04).abs() < 1e-12);
        let s = d.sample(&at(100.0), true, 2.0);
        assert_eq!(s.pose.position.x, 80.0);
        assert!(s.button);
        assert_eq!(s.seq, 3);
        let s = d.sample(&Pose::from_translation(Vec3::new(-1000.0, 70.0, -65.01)), false, 3.0);
        assert_eq!(s.pose.position, Vec3::new(-80.0, 65.0, -65.0));
    }

    #[test]
    fn ties_round_away_from_zero() {
        let l = DeviceLimits::default();
        assert!((l.quantize_position(&Vec3::new(0.01, -0.01, 0.03)) - Vec3::new(0.02, -0.02, 0.04)).norm() < 1e-12);
    }

    #[test]
    fn orientation_not_quantized() {
        let q = UnitQuaternion::from_euler_angles(0.123456789, 0.0, 0.0);
        let s = Device::default().sample(&Pose::from_rotation(q), false, 0.0);
        assert_eq!(s.pose.orientation, q);
    }

    #[test]
    fn force_clamp() {
        let c = clamp_force(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!((c.force, c.clamped), (Vec3::new(2.0, 0.0, 0.0), false));
        let c = clamp_force(&Vec3::new(10.0, 0.0, 0.0)).unwrap();
        assert!((c.force - Vec3::new(6.4, 0.0, 0.0)).norm() < 1e-12 && c.clamped);
        assert_eq!(clamp_force(&Vec3::zeros()).unwrap().force, Vec3::zeros());
        assert!(clamp_force(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(clamp_force(&Vec3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn script_interpolates_and_holds() {
        let s = Script::new(vec![Keyframe::at(0.0, Vec3::zeros()), Keyframe::at(1000.0, Vec3::new(100.0, 0.0, 0.0))]).unwrap();
        assert_eq!(s.drive(500.0).pose.position, Vec3::new(50.0, 0.0, 0.0));
        assert_eq!(s.drive(2000.0).pose.position, Vec3::new(100.0, 0.0, 0.0));
        assert_eq!(s.drive(-5.0).pose.position, Vec3::zeros());
    }

    #[test]
    fn script_slerp_half_way() {
        let mut end = Keyframe::at(1000.0, Vec3::zeros());
        let h = FRAC_PI_2 / 2.0;
        end.quat_wxyz = [h.cos(), 0.0, 0.0, h.sin()];
        let s = Script::new(vec![Keyframe::at(0.0, Vec3::zeros()), end]).unwrap();
        let q = s.drive(500.0).pose.orientation;
        // Slerp between identity and a 90° z-rotation: sin-weighted blend at s = 1/2.
        let omega = h;
        let wa = (0.5 * omega).sin() / omega.sin();
        let wb = wa;
        let expected = [wa + wb * h.cos(), 0.0, 0.0, wb * h.sin()];
        let got = q.quaternion();
        assert!((got.w - expected[0]).abs() < 1e-12 && (got.k - expected[3]).abs() < 1e-12);
        assert!((q.angle() - FRAC_PI_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn script_validation() {
        assert!(matches!(Script::new(vec![]), Err(DeviceError::EmptyScript)));
        let r = Script::new(vec![Keyframe::at(10.0, Vec3::zeros()), Keyframe::at(5.0, Vec3::zeros())]);
        assert!(matches!(r, Err(DeviceError::UnorderedScript(1))));
    }

    #[test]
    fn script_file_schema() {
        let json = r#"[{"t_ms":0,"position_mm":[0,0,0],"quat_wxyz":[1,0,0,0],"button":false},
                       {"t_ms":100,"position_mm":[1,2,3],"quat_wxyz":[1,0,0,0],"button":true,"clutch":false}]"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, json).unwrap();
        let s = Script::load(&p).unwrap();
        assert!(s.drive(150.0).button);
        assert_eq!(s.clutch_events(50.0, 100.0).collect::<Vec<_>>(), vec![false]);
        std::fs::write(&p, r#"[{"t_ms":0,"position_mm":[0,0]}]"#).unwrap();
        let err = Script::load(&p).unwrap_err().to_string();
        assert!(err.contains("position_mm"), "{err}");
    }

    #[test]
    fn monitor_counts_excursions() {
        let mut m = ContinuousForceMonitor::new(10, 1.4);
        for _ in 0..10 {
            m.push(1.0);
        }
        assert_eq!(m.warnings(), 0);
        for _ in 0..10 {
            m.push(3.0);
        }
        assert_eq!(m.warnings(), 1);
        assert!((m.mean() - 3.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantization_idempotent(x in -200.0..200.0f64, y in -200.0..200.0f64, z in -200.0..200.0f64) {
                let mut d = Device::default();
                let once = d.sample(&Pose::from_translation(Vec3::new(x, y, z)), false, 0.0);
                let twice = d.sample(&once.pose, false, 0.0);
                prop_assert_eq!(once.pose.position, twice.pose.position);
                prop_assert!(twice.seq > once.seq);
            }

            #[test]
            fn clamped_force_bounded(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
                let c = clamp_force(&Vec3::new(x, y, z)).unwrap();
                prop_assert!(c.force.norm() <= 6.4 + 1e-9);
            }
        }
    }
}
