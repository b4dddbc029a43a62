//! The full tracking → handpose → control → simarm chain, driven by frame
//! arrivals and a millisecond clock. Replay and the live gateway both run
//! through [`Engine`], so they share one code path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    map_target, CommandKind, ControlError, ControlState, Controller, LifecycleEvent, RobotCommand, SemiPhase,
    TargetPose, COMMAND_PERIOD_MS,
};
use crate::frame::LandmarkFrame;
use crate::geometry::{CameraIntrinsics, GeometryError, Point3, RigidTransform, RollQuaternion};
use crate::handpose::{palm_normal, roll_quaternion, GestureClassifier, GestureSignal, HandError, OrientationHold};
use crate::simarm::{
    select_object, ArmCommand, ArmModel, ArmSimulator, ArmState, GraspRoutine, RoutineStatus, Scene, SimError,
};
use crate::tracking::{CalibrationState, FilterConfig, FilterOutcome, TrackedWrist, TrackingError, WristTracker};

/// Simulator integration step.
pub const SUBSTEP_MS: u64 = 10;
/// A wrist sample older than this at tick time is treated as stale.
pub const DEFAULT_STALE_AFTER_MS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid frame at {t_ms} ms: {reason}")]
    InvalidFrame { t_ms: u64, reason: String },
    #[error("frame at {t_ms} ms is not after engine time {now_ms} ms")]
    OutOfOrder { t_ms: u64, now_ms: u64 },
    #[error("unknown arm model {0:?}")]
    UnknownArmModel(String),
}

/// Everything needed to build an engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Known camera→marker transform; when absent the first marker detection locks it.
    #[serde(default)]
    pub marker_from_camera: Option<RigidTransform>,
    pub robot_from_marker: RigidTransform,
    pub arm: ArmModel,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default = "default_stale")]
    pub stale_after_ms: u64,
}

fn default_stale() -> u64 {
    DEFAULT_STALE_AFTER_MS
}

/// Resolves a built-in arm model by id.
pub fn arm_model_by_id(id: &str) -> Result<ArmModel, EngineError> {
    let model = ArmModel::desk_6dof();
    if model.id == id {
        Ok(model)
    } else {
        Err(EngineError::UnknownArmModel(id.to_string()))
    }
}

/// Something the engine did that callers may want to log or assert on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EngineEvent {
    CalibrationLocked { t_ms: u64 },
    ModeChanged { t_ms: u64, state: ControlState },
    Command { command: RobotCommand },
    Lifecycle { t_ms: u64, event: LifecycleEvent },
    FrameRejected { t_ms: u64 },
    Reseeded { t_ms: u64 },
}

#[derive(Debug)]
pub struct Engine {
    tracker: WristTracker,
    calib: CalibrationState,
    classifier: GestureClassifier,
    orientation_hold: OrientationHold,
    controller: Controller,
    sim: ArmSimulator,
    routine: Option<GraspRoutine>,
    stale_after_ms: u64,

    gesture: GestureSignal,
    orientation: RollQuaternion,
    latest_wrist: Option<TrackedWrist>,
    active_target: Option<TargetPose>,
    last_command: Option<RobotCommand>,

    now_ms: Option<u64>,
    last_frame_ms: Option<u64>,
    next_tick_ms: u64,
    reported_state: ControlState,
    events: Vec<EngineEvent>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let calib = match config.marker_from_camera {
            Some(mfc) => CalibrationState::preset(mfc, config.robot_from_marker),
            None => CalibrationState::unlocked(config.robot_from_marker),
        };
        Ok(Self {
            tracker: WristTracker::new(config.intrinsics, config.filter)?,
            calib,
            classifier: GestureClassifier::default(),
            orientation_hold: OrientationHold::default(),
            controller: Controller::new(),
            sim: ArmSimulator::new(config.arm, config.scene)?,
            routine: None,
            stale_after_ms: config.stale_after_ms,
            gesture: GestureSignal::NONE,
            orientation: RollQuaternion::IDENTITY,
            latest_wrist: None,
            active_target: None,
            last_command: None,
            now_ms: None,
            last_frame_ms: None,
            next_tick_ms: 0,
            reported_state: ControlState::Idle,
            events: Vec::new(),
        })
    }

    pub fn now_ms(&self) -> Option<u64> {
        self.now_ms
    }

    pub fn control_state(&self) -> ControlState {
        self.controller.state()
    }

    pub fn gesture(&self) -> &GestureSignal {
        &self.gesture
    }

    pub fn arm_state(&self) -> &ArmState {
        self.sim.state()
    }

    pub fn scene(&self) -> &Scene {
        self.sim.scene()
    }

    pub fn simulator(&self) -> &ArmSimulator {
        &self.sim
    }

    pub fn calibration(&self) -> &CalibrationState {
        &self.calib
    }

    pub fn latest_wrist(&self) -> Option<&TrackedWrist> {
        self.latest_wrist.as_ref()
    }

    /// Latest wrist sample mapped into the robot frame.
    pub fn wrist_robot(&self) -> Option<Point3> {
        self.latest_wrist.map(|w| self.calib.robot_from_marker().apply(w.position_marker))
    }

    /// The pose the arm is currently being driven toward in streaming modes.
    pub fn active_target(&self) -> Option<&TargetPose> {
        self.active_target.as_ref()
    }

    pub fn last_command(&self) -> Option<&RobotCommand> {
        self.last_command.as_ref()
    }

    pub fn routine_status(&self) -> Option<&RoutineStatus> {
        self.routine.as_ref().map(|r| r.status())
    }

    pub fn drain_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    /// Advances to the frame's timestamp, folds the frame in, then runs a
    /// tick if one falls exactly on that timestamp.
    pub fn process_frame(&mut self, frame: &LandmarkFrame) -> Result<(), EngineError> {
        frame.validate().map_err(|reason| EngineError::InvalidFrame { t_ms: frame.t_ms, reason })?;
        if let Some(last) = self.last_frame_ms {
            if frame.t_ms <= last {
                return Err(EngineError::OutOfOrder { t_ms: frame.t_ms, now_ms: last });
            }
        }
        match self.now_ms {
            Some(now) if frame.t_ms < now => return Err(EngineError::OutOfOrder { t_ms: frame.t_ms, now_ms: now }),
            Some(_) => self.simulate_until(frame.t_ms)?,
            None => {
                self.now_ms = Some(frame.t_ms);
                self.next_tick_ms = frame.t_ms;
            }
        }
        self.last_frame_ms = Some(frame.t_ms);
        self.ingest(frame)?;
        self.run_due_tick()
    }

    /// Advances the clock without new input (used by the live server).
    pub fn advance_to(&mut self, t_ms: u64) -> Result<(), EngineError> {
        let Some(now) = self.now_ms else { return Ok(()) };
        if t_ms <= now {
            return Ok(());
        }
        self.simulate_until(t_ms)?;
        self.run_due_tick()
    }

    /// Out-of-band reset: idle mode, any grasp routine aborted, arm held.
    pub fn reset(&mut self) -> Result<(), EngineError> {
        self.stop_motion()?;
        self.controller.reset();
        self.classifier.clear();
        self.gesture = GestureSignal::NONE;
        self.push_mode_event();
        Ok(())
    }

    /// Emergency stop: same state outcome as reset, logged loudly.
    pub fn estop(&mut self) -> Result<(), EngineError> {
        log::warn!("emergency stop at {:?} ms", self.now_ms);
        self.reset()
    }

    fn stop_motion(&mut self) -> Result<(), EngineError> {
        self.active_target = None;
        if let Some(mut routine) = self.routine.take() {
            routine.abort(&mut self.sim, SUBSTEP_MS as f64 / 1000.0)?;
        }
        self.sim.step(&ArmCommand::Hold, SUBSTEP_MS as f64 / 1000.0)?;
        Ok(())
    }

    fn ingest(&mut self, frame: &LandmarkFrame) -> Result<(), EngineError> {
        let t = frame.t_ms;
        if let Some(m) = &frame.marker {
            if !self.calib.is_locked() {
                self.calib.calibrate_once(&m.rotation_matrix(), &m.translation_vector())?;
                self.events.push(EngineEvent::CalibrationLocked { t_ms: t });
            }
        }

        if let Some(hand) = &frame.hand {
            self.gesture = self.classifier.classify(hand)?;
            let raw = roll_quaternion(&palm_normal(hand)?);
            self.orientation = self.orientation_hold.update(raw, &self.gesture, t);
            let before = self.controller.state();
            self.controller.observe_gesture(&self.gesture, t);
            if self.controller.state() != before {
                self.push_mode_event();
            }
        }

        if !self.calib.is_locked() {
            return Ok(());
        }
        let tracked = match &frame.wrist {
            Some(_) => match self.tracker.track(frame, &self.calib) {
                Ok(w) => Some(w),
                Err(TrackingError::NoTrack) => None,
                Err(e) => return Err(e.into()),
            },
            None => self.tracker.hold(t, &self.calib)?,
        };
        match self.tracker.last_outcome() {
            Some(FilterOutcome::Rejected) => self.events.push(EngineEvent::FrameRejected { t_ms: t }),
            Some(FilterOutcome::Reseeded) => self.events.push(EngineEvent::Reseeded { t_ms: t }),
            _ => {}
        }
        if tracked.is_some() {
            self.latest_wrist = tracked;
        }
        Ok(())
    }

    fn simulate_until(&mut self, t_ms: u64) -> Result<(), EngineError> {
        let mut now = self.now_ms.expect("clock started");
        while now < t_ms {
            if self.next_tick_ms <= now {
                self.tick(now)?;
            }
            let dt = SUBSTEP_MS.min(t_ms - now).min(self.next_tick_ms.saturating_sub(now).max(1));
            self.substep(dt as f64 / 1000.0)?;
            now += dt;
            self.now_ms = Some(now);
        }
        Ok(())
    }

    fn run_due_tick(&mut self) -> Result<(), EngineError> {
        let now = self.now_ms.expect("clock started");
        if self.next_tick_ms <= now {
            self.tick(now)?;
        }
        Ok(())
    }

    fn fresh_target(&self, now: u64) -> Option<TargetPose> {
        let wrist = self.latest_wrist.filter(|w| now.saturating_sub(w.timestamp_ms) <= self.stale_after_ms)?;
        map_target(&wrist, self.orientation, &self.calib).ok()
    }

    fn tick(&mut self, now: u64) -> Result<(), EngineError> {
        self.next_tick_ms = now + COMMAND_PERIOD_MS;
        let target = self.fresh_target(now);
        let sim = &self.sim;
        let select = || {
            let scene = sim.scene();
            select_object(&scene.objects, sim.state().ee_position(), &scene.allowed_classes).ok().map(|o| o.id.clone())
        };
        let Some(cmd) = self.controller.tick(now, target, &self.gesture, select) else {
            return Ok(());
        };
        self.execute(&cmd, now)?;
        self.events.push(EngineEvent::Command { command: cmd.clone() });
        self.last_command = Some(cmd);
        Ok(())
    }

    fn execute(&mut self, cmd: &RobotCommand, now: u64) -> Result<(), EngineError> {
        let dt = SUBSTEP_MS as f64 / 1000.0;
        match &cmd.kind {
            CommandKind::MoveEe { target } => self.active_target = Some(*target),
            CommandKind::Hold => {
                self.active_target = None;
                if self.controller.state() == ControlState::SemiAutonomous(SemiPhase::Executing) {
                    if let Some(mut routine) = self.routine.take() {
                        routine.abort(&mut self.sim, dt)?;
                    }
                    self.lifecycle(LifecycleEvent::Aborted, now)?;
                }
            }
            CommandKind::GripperOpen => {
                self.sim.step(&ArmCommand::GripperOpen, dt)?;
            }
            CommandKind::GripperClose => {
                self.sim.step(&ArmCommand::GripperClose, dt)?;
            }
            CommandKind::GraspObject { object_id } => {
                let object = self
                    .sim
                    .scene()
                    .object(object_id)
                    .cloned()
                    .ok_or_else(|| SimError::UnknownObject(object_id.clone()))?;
                self.active_target = None;
                self.routine = Some(GraspRoutine::start(&self.sim, &object));
                self.lifecycle(LifecycleEvent::GraspStarted, now)?;
            }
            CommandKind::ReleaseObject => {
                self.active_target = None;
                self.sim.step(&ArmCommand::GripperOpen, dt)?;
                self.lifecycle(LifecycleEvent::Released, now)?;
            }
        }
        Ok(())
    }

    fn substep(&mut self, dt_s: f64) -> Result<(), EngineError> {
        if let Some(routine) = self.routine.as_mut() {
            let status = routine.step(&mut self.sim, dt_s)?;
            if status.is_terminal() {
                self.routine = None;
                let now = self.now_ms.unwrap_or(0);
                let event = match status {
                    RoutineStatus::Succeeded => LifecycleEvent::GraspSucceeded,
                    RoutineStatus::Aborted => LifecycleEvent::Aborted,
                    _ => {
                        log::info!("grasp routine ended: {status:?}");
                        LifecycleEvent::GraspFailed
                    }
                };
                self.lifecycle(event, now)?;
            }
            return Ok(());
        }
        let cmd = match self.active_target {
            Some(target) => ArmCommand::MoveEe { target },
            None => ArmCommand::Hold,
        };
        self.sim.step(&cmd, dt_s)?;
        Ok(())
    }

    fn lifecycle(&mut self, event: LifecycleEvent, t_ms: u64) -> Result<(), EngineError> {
        self.controller.grasp_lifecycle(event)?;
        self.events.push(EngineEvent::Lifecycle { t_ms, event });
        self.push_mode_event();
        Ok(())
    }

    fn push_mode_event(&mut self) {
        let t_ms = self.now_ms.unwrap_or(0);
        let state = self.controller.state();
        if state != self.reported_state {
            self.reported_state = state;
            self.events.push(EngineEvent::ModeChanged { t_ms, state });
        }
    }
}
