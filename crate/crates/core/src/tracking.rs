//! Wrist tracking: depth-window median, back-projection, EMA smoothing with
//! jump rejection, and the camera-to-marker frame change.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::LandmarkFrame;
use crate::geometry::{
    back_project, invert_pose, CameraIntrinsics, GeometryError, PixelDepthPoint, Point3, RigidTransform,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("calibration has not been locked yet")]
    NotCalibrated,
    #[error("timestamp {t_ms} ms is not after the previous sample at {prev_ms} ms")]
    NonMonotonicTimestamp { t_ms: u64, prev_ms: u64 },
    #[error("no wrist track yet and the current frame has no usable depth")]
    NoTrack,
    #[error("frame at {0} ms carries no wrist observation")]
    NoWrist(u64),
    #[error("raw wrist sample is not finite")]
    NonFinite,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub ema_alpha: f64,
    pub jump_threshold_m: f64,
    pub depth_window: usize,
    pub max_consecutive_rejects: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { ema_alpha: 0.5, jump_threshold_m: 0.25, depth_window: 5, max_consecutive_rejects: 15 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(TrackingError::InvalidConfig(format!("ema_alpha must be in (0, 1], got {}", self.ema_alpha)));
        }
        if !(self.jump_threshold_m > 0.0) {
            return Err(TrackingError::InvalidConfig(format!(
                "jump_threshold_m must be positive, got {}",
                self.jump_threshold_m
            )));
        }
        if self.depth_window % 2 == 0 {
            return Err(TrackingError::InvalidConfig(format!(
                "depth_window must be odd and >= 1, got {}",
                self.depth_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationOutcome {
    Locked,
    /// The state was already locked; nothing changed.
    AlreadyLocked,
}

/// Camera→marker and marker→robot transforms. The camera→marker part is
/// computed once from the first marker detection and then frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    marker_from_camera: RigidTransform,
    robot_from_marker: RigidTransform,
    locked: bool,
}

impl CalibrationState {
    pub fn unlocked(robot_from_marker: RigidTransform) -> Self {
        Self { marker_from_camera: RigidTransform::identity(), robot_from_marker, locked: false }
    }

    /// A state whose camera→marker transform is already known.
    pub fn preset(marker_from_camera: RigidTransform, robot_from_marker: RigidTransform) -> Self {
        Self { marker_from_camera, robot_from_marker, locked: true }
    }

    pub fn marker_from_camera(&self) -> &RigidTransform {
        &self.marker_from_camera
    }

    pub fn robot_from_marker(&self) -> &RigidTransform {
        &self.robot_from_marker
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    /// Locks the camera→marker transform from a marker detection (the
    /// detector reports the marker pose in the camera frame, so it is inverted).
    pub fn calibrate_once(
        &mut self,
        marker_rotation: &Matrix3<f64>,
        marker_translation: &Vector3<f64>,
    ) -> Result<CalibrationOutcome, GeometryError> {
        if self.locked {
            return Ok(CalibrationOutcome::AlreadyLocked);
        }
        self.marker_from_camera = invert_pose(marker_rotation, marker_translation)?;
        self.locked = true;
        Ok(CalibrationOutcome::Locked)
    }
}

/// Lower median of the non-zero readings; 0 when every reading is invalid.
pub fn median_depth(window: &[u16]) -> u16 {
    let mut valid: Vec<u16> = window.iter().copied().filter(|&d| d != 0).collect();
    if valid.is_empty() {
        return 0;
    }
    let mid = (valid.len() - 1) / 2;
    *valid.select_nth_unstable(mid).1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOutcome {
    Seeded,
    Accepted,
    Rejected,
    Reseeded,
    /// No usable observation this tick; the previous output is held.
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSample {
    pub position: Point3,
    pub velocity_mps: f64,
    pub timestamp_ms: u64,
    pub outcome: FilterOutcome,
}

impl FilterSample {
    pub fn fresh(&self) -> bool {
        !matches!(self.outcome, FilterOutcome::Rejected | FilterOutcome::Held)
    }
}

/// Exponential moving average with jump rejection.
///
/// The jump test compares each raw sample against the last emitted (filtered)
/// position. After more than `max_consecutive_rejects` rejections in a row
/// the filter re-seeds on the raw sample.
#[derive(Debug, Clone)]
pub struct WristFilter {
    cfg: FilterConfig,
    last: Option<FilterSample>,
    consecutive_rejects: u32,
}

impl WristFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self, TrackingError> {
        cfg.validate()?;
        Ok(Self { cfg, last: None, consecutive_rejects: 0 })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn last(&self) -> Option<&FilterSample> {
        self.last.as_ref()
    }

    pub fn consecutive_rejects(&self) -> u32 {
        self.consecutive_rejects
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.consecutive_rejects = 0;
    }

    pub fn step(&mut self, raw: Point3, t_ms: u64) -> Result<FilterSample, TrackingError> {
        if !raw.is_finite() {
            return Err(TrackingError::NonFinite);
        }
        let Some(prev) = self.last else {
            return Ok(self.emit(raw, 0.0, t_ms, FilterOutcome::Seeded));
        };
        if t_ms <= prev.timestamp_ms {
            return Err(TrackingError::NonMonotonicTimestamp { t_ms, prev_ms: prev.timestamp_ms });
        }

        if raw.distance(prev.position) > self.cfg.jump_threshold_m {
            self.consecutive_rejects += 1;
            if self.consecutive_rejects > self.cfg.max_consecutive_rejects {
                return Ok(self.emit(raw, 0.0, t_ms, FilterOutcome::Reseeded));
            }
            let held = FilterSample { timestamp_ms: t_ms, outcome: FilterOutcome::Rejected, ..prev };
            self.last = Some(held);
            return Ok(held);
        }

        let a = self.cfg.ema_alpha;
        let position = raw * a + prev.position * (1.0 - a);
        let dt = (t_ms - prev.timestamp_ms) as f64 / 1000.0;
        let instant_speed = position.distance(prev.position) / dt;
        let velocity = a * instant_speed + (1.0 - a) * prev.velocity_mps;
        Ok(self.emit(position, velocity, t_ms, FilterOutcome::Accepted))
    }

    /// Re-emits the previous output at a new time, marked stale.
    pub fn hold(&mut self, t_ms: u64) -> Result<Option<FilterSample>, TrackingError> {
        let Some(prev) = self.last else { return Ok(None) };
        if t_ms <= prev.timestamp_ms {
            return Err(TrackingError::NonMonotonicTimestamp { t_ms, prev_ms: prev.timestamp_ms });
        }
        let held = FilterSample { timestamp_ms: t_ms, outcome: FilterOutcome::Held, ..prev };
        self.last = Some(held);
        Ok(Some(held))
    }

    fn emit(&mut self, position: Point3, velocity_mps: f64, t_ms: u64, outcome: FilterOutcome) -> FilterSample {
        self.consecutive_rejects = 0;
        let s = FilterSample { position, velocity_mps, timestamp_ms: t_ms, outcome };
        self.last = Some(s);
        s
    }
}

/// Filtered wrist position in the marker frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedWrist {
    pub position_marker: Point3,
    pub velocity_mps: f64,
    pub timestamp_ms: u64,
    pub fresh: bool,
}

/// One tracker per operator stream.
#[derive(Debug, Clone)]
pub struct WristTracker {
    intrinsics: CameraIntrinsics,
    filter: WristFilter,
    last_outcome: Option<FilterOutcome>,
}

impl WristTracker {
    pub fn new(intrinsics: CameraIntrinsics, cfg: FilterConfig) -> Result<Self, TrackingError> {
        Ok(Self { intrinsics, filter: WristFilter::new(cfg)?, last_outcome: None })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn filter(&self) -> &WristFilter {
        &self.filter
    }

    pub fn last_outcome(&self) -> Option<FilterOutcome> {
        self.last_outcome
    }

    pub fn reset(&mut self) {
        self.filter.reset();
        self.last_outcome = None;
    }

    /// Median depth → back-projection → filter (camera frame) → marker frame.
    pub fn track(&mut self, frame: &LandmarkFrame, calib: &CalibrationState) -> Result<TrackedWrist, TrackingError> {
        if !calib.is_locked() {
            return Err(TrackingError::NotCalibrated);
        }
        let wrist = frame.wrist.as_ref().ok_or(TrackingError::NoWrist(frame.t_ms))?;
        let depth_mm = if wrist.depth_window.is_empty() { wrist.depth_mm } else { median_depth(&wrist.depth_window) };

        let sample = if depth_mm == 0 {
            self.filter.hold(frame.t_ms)?.ok_or(TrackingError::NoTrack)?
        } else {
            let raw = back_project(PixelDepthPoint { u: wrist.u, v: wrist.v, depth_mm }, &self.intrinsics)?;
            self.filter.step(raw, frame.t_ms)?
        };
        self.last_outcome = Some(sample.outcome);
        Ok(TrackedWrist {
            position_marker: calib.marker_from_camera().apply(sample.position),
            velocity_mps: sample.velocity_mps,
            timestamp_ms: sample.timestamp_ms,
            fresh: sample.fresh(),
        })
    }

    /// Marks the track stale at `t_ms` when a frame arrives without a wrist.
    pub fn hold(&mut self, t_ms: u64, calib: &CalibrationState) -> Result<Option<TrackedWrist>, TrackingError> {
        let Some(sample) = self.filter.hold(t_ms)? else { return Ok(None) };
        self.last_outcome = Some(sample.outcome);
        Ok(Some(TrackedWrist {
            position_marker: calib.marker_from_camera().apply(sample.position),
            velocity_mps: sample.velocity_mps,
            timestamp_ms: sample.timestamp_ms,
            fresh: false,
        }))
    }
}
