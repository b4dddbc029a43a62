//! Shared-control state machine: finger-count mode selection, 5 Hz pose
//! streaming in manual mode, gesture-to-action mapping and the
//! semi-autonomous grasp lifecycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RollQuaternion};
use crate::handpose::{GestureLabel, GestureSignal};
use crate::tracking::{CalibrationState, TrackedWrist};

/// Manual pose-streaming rate.
pub const COMMAND_PERIOD_MS: u64 = 200;
/// How long a mode-selection finger count must be held once stable.
pub const MODE_SELECT_HOLD_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("wrist sample at {0} ms is stale")]
    StaleInput(u64),
    #[error("calibration is not locked")]
    NotCalibrated,
    #[error("lifecycle event {event:?} is invalid in state {state:?}")]
    InvalidEvent { event: LifecycleEvent, state: ControlState },
}

/// Desired end-effector pose in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPose {
    pub position_robot: Point3,
    pub orientation: RollQuaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Idle,
    Manual,
    SemiAutonomous,
}

/// Sub-states of semi-autonomous mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiPhase {
    /// Waiting for a grasp gesture.
    Armed,
    /// The autonomous grasp routine owns the arm.
    Executing,
    /// An object is held; the operator steers it and releases with an open palm.
    Holding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "phase")]
pub enum ControlState {
    Idle,
    Manual,
    SemiAutonomous(SemiPhase),
}

impl ControlState {
    pub const ALL: [ControlState; 5] = [
        ControlState::Idle,
        ControlState::Manual,
        ControlState::SemiAutonomous(SemiPhase::Armed),
        ControlState::SemiAutonomous(SemiPhase::Executing),
        ControlState::SemiAutonomous(SemiPhase::Holding),
    ];

    pub fn mode(&self) -> ControlMode {
        match self {
            ControlState::Idle => ControlMode::Idle,
            ControlState::Manual => ControlMode::Manual,
            ControlState::SemiAutonomous(_) => ControlMode::SemiAutonomous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CommandKind {
    MoveEe { target: TargetPose },
    GripperOpen,
    GripperClose,
    GraspObject { object_id: String },
    ReleaseObject,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    pub issued_at_ms: u64,
    #[serde(flatten)]
    pub kind: CommandKind,
}

/// Payload-free outcome of one control decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    MoveEe,
    GripperOpen,
    GripperClose,
    GraspObject,
    ReleaseObject,
    Hold,
    Nothing,
}

/// The control table. `label`/`stable` are the gesture after edge
/// suppression: a gesture that already produced its discrete command is
/// presented as an unstable neutral until it changes.
pub fn decide(state: ControlState, label: GestureLabel, stable: bool, fresh: bool) -> Decision {
    use GestureLabel::*;
    let stable_label = stable.then_some(label);
    let stream = if fresh { Decision::MoveEe } else { Decision::Hold };
    match state {
        ControlState::Idle => Decision::Hold,
        ControlState::Manual => match stable_label {
            Some(OpenPalm) => Decision::GripperOpen,
            Some(ClosedFist) => Decision::GripperClose,
            _ => stream,
        },
        ControlState::SemiAutonomous(SemiPhase::Armed) => match stable_label {
            Some(ClosedFist) => Decision::GraspObject,
            _ => Decision::Nothing,
        },
        ControlState::SemiAutonomous(SemiPhase::Executing) => match stable_label {
            Some(Neutral) => Decision::Hold,
            _ => Decision::Nothing,
        },
        ControlState::SemiAutonomous(SemiPhase::Holding) => match stable_label {
            Some(OpenPalm) => Decision::ReleaseObject,
            _ => stream,
        },
    }
}

/// Mode entry from idle: one finger → manual, two → semi-autonomous, each
/// held stably for at least [`MODE_SELECT_HOLD_MS`].
pub fn mode_select(signal: &GestureSignal, held_ms: u64, mode: ControlMode) -> ControlMode {
    if mode != ControlMode::Idle || !signal.stable || held_ms < MODE_SELECT_HOLD_MS {
        return mode;
    }
    match signal.finger_count {
        1 => ControlMode::Manual,
        2 => ControlMode::SemiAutonomous,
        _ => ControlMode::Idle,
    }
}

/// Robot-frame target from a fresh marker-frame wrist sample.
pub fn map_target(
    wrist: &TrackedWrist,
    q: RollQuaternion,
    calib: &CalibrationState,
) -> Result<TargetPose, ControlError> {
    if !calib.is_locked() {
        return Err(ControlError::NotCalibrated);
    }
    if !wrist.fresh {
        return Err(ControlError::StaleInput(wrist.timestamp_ms));
    }
    Ok(TargetPose { position_robot: calib.robot_from_marker().apply(wrist.position_marker), orientation: q })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    GraspStarted,
    GraspSucceeded,
    GraspFailed,
    /// Operator intervention during execution.
    Aborted,
    Released,
}

/// The single owner of mode and sub-state.
#[derive(Debug, Clone)]
pub struct Controller {
    state: ControlState,
    hold: Option<(u8, u64)>,
    consumed: Option<GestureLabel>,
}

impl Default for Controller {
    fn default() -> Self {
        Self::new()
    }
}

impl Controller {
    pub fn new() -> Self {
        Self { state: ControlState::Idle, hold: None, consumed: None }
    }

    pub fn state(&self) -> ControlState {
        self.state
    }

    pub fn mode(&self) -> ControlMode {
        self.state.mode()
    }

    /// Out-of-band reset: back to idle, selection timers cleared.
    pub fn reset(&mut self) {
        *self = Self::new();
    }

    /// Feeds a per-frame gesture observation; drives mode selection while idle.
    pub fn observe_gesture(&mut self, signal: &GestureSignal, t_ms: u64) -> ControlMode {
        if signal.label != self.consumed.unwrap_or(signal.label) {
            self.consumed = None;
        }
        if self.state != ControlState::Idle {
            return self.mode();
        }
        if !signal.stable {
            self.hold = None;
            return self.mode();
        }
        let since = match self.hold {
            Some((count, since)) if count == signal.finger_count => since,
            _ => {
                self.hold = Some((signal.finger_count, t_ms));
                t_ms
            }
        };
        let next = mode_select(signal, t_ms.saturating_sub(since), ControlMode::Idle);
        self.state = match next {
            ControlMode::Idle => ControlState::Idle,
            ControlMode::Manual => ControlState::Manual,
            ControlMode::SemiAutonomous => ControlState::SemiAutonomous(SemiPhase::Armed),
        };
        if self.state != ControlState::Idle {
            log::info!("mode selected: {:?} at {t_ms} ms", self.state);
            self.hold = None;
        }
        self.mode()
    }

    /// One command-loop iteration.
    ///
    /// `select_object` is consulted only when a grasp is about to be issued.
    pub fn tick(
        &mut self,
        now_ms: u64,
        latest_target: Option<TargetPose>,
        gesture: &GestureSignal,
        select_object: impl FnOnce() -> Option<String>,
    ) -> Option<RobotCommand> {
        let edge = gesture.stable && self.consumed != Some(gesture.label);
        let (label, stable) = if edge { (gesture.label, true) } else { (GestureLabel::Neutral, false) };
        let decision = decide(self.state, label, stable, latest_target.is_some());
        let kind = match decision {
            Decision::MoveEe => CommandKind::MoveEe { target: latest_target? },
            Decision::Hold => CommandKind::Hold,
            Decision::Nothing => return None,
            Decision::GripperOpen => CommandKind::GripperOpen,
            Decision::GripperClose => CommandKind::GripperClose,
            Decision::ReleaseObject => CommandKind::ReleaseObject,
            Decision::GraspObject => CommandKind::GraspObject { object_id: select_object()? },
        };
        if matches!(
            decision,
            Decision::GripperOpen | Decision::GripperClose | Decision::GraspObject | Decision::ReleaseObject
        ) || (decision == Decision::Hold && stable)
        {
            self.consumed = Some(gesture.label);
        }
        Some(RobotCommand { issued_at_ms: now_ms, kind })
    }

    pub fn grasp_lifecycle(&mut self, event: LifecycleEvent) -> Result<ControlState, ControlError> {
        use LifecycleEvent::*;
        use SemiPhase::*;
        let ControlState::SemiAutonomous(phase) = self.state else {
            return Err(ControlError::InvalidEvent { event, state: self.state });
        };
        let next = match (phase, event) {
            (Armed, GraspStarted) => Executing,
            (Executing, GraspSucceeded) => Holding,
            (Executing, GraspFailed | Aborted) => Armed,
            (Holding, Released) => Armed,
            _ => return Err(ControlError::InvalidEvent { event, state: self.state }),
        };
        self.state = ControlState::SemiAutonomous(next);
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use GestureLabel::*;

    fn signal(label: GestureLabel, count: u8, stable: bool) -> GestureSignal {
        GestureSignal { label, finger_count: count, stable }
    }

    fn target(x: f64) -> TargetPose {
        TargetPose { position_robot: Point3::new(x, 0.0, 0.2), orientation: RollQuaternion::IDENTITY }
    }

    fn wrist(fresh: bool) -> TrackedWrist {
        TrackedWrist { position_marker: Point3::new(0.5, 0.0, 0.4), velocity_mps: 0.0, timestamp_ms: 10, fresh }
    }

    #[test]
    fn mode_select_examples() {
        assert_eq!(mode_select(&signal(Neutral, 1, true), 1200, ControlMode::Idle), ControlMode::Manual);
        assert_eq!(mode_select(&signal(Neutral, 2, true), 1500, ControlMode::Idle), ControlMode::SemiAutonomous);
        assert_eq!(mode_select(&signal(Neutral, 1, true), 400, ControlMode::Idle), ControlMode::Idle);
        assert_eq!(mode_select(&signal(Neutral, 1, false), 4000, ControlMode::Idle), ControlMode::Idle);
        assert_eq!(mode_select(&signal(Neutral, 2, true), 4000, ControlMode::Manual), ControlMode::Manual);
    }

    #[test]
    fn map_target_examples() {
        let calib = CalibrationState::preset(RigidTransform::identity(), RigidTransform::identity());
        let t = map_target(&wrist(true), RollQuaternion::IDENTITY, &calib).unwrap();
        assert_eq!(t.position_robot, Point3::new(0.5, 0.0, 0.4));

        let calib = CalibrationState::preset(
            RigidTransform::identity(),
            RigidTransform::from_translation(Point3::new(0.2, 0.0, 0.0)),
        );
        let t = map_target(&wrist(true), RollQuaternion::IDENTITY, &calib).unwrap();
        assert!(t.position_robot.distance(Point3::new(0.7, 0.0, 0.4)) < 1e-15);

        assert_eq!(map_target(&wrist(false), RollQuaternion::IDENTITY, &calib), Err(ControlError::StaleInput(10)));
    }

    #[test]
    fn observe_selects_manual_after_hold() {
        let mut c = Controller::new();
        let one = signal(Neutral, 1, true);
        assert_eq!(c.observe_gesture(&one, 0), ControlMode::Idle);
        assert_eq!(c.observe_gesture(&one, 999), ControlMode::Idle);
        assert_eq!(c.observe_gesture(&one, 1000), ControlMode::Manual);
        // gestures never leave a mode
        assert_eq!(c.observe_gesture(&signal(Neutral, 2, true), 5000), ControlMode::Manual);
        assert_eq!(c.observe_gesture(&signal(ClosedFist, 0, true), 9000), ControlMode::Manual);
        c.reset();
        assert_eq!(c.mode(), ControlMode::Idle);
    }

    #[test]
    fn count_change_restarts_hold() {
        let mut c = Controller::new();
        c.observe_gesture(&signal(Neutral, 1, true), 0);
        c.observe_gesture(&signal(Neutral, 2, true), 700);
        assert_eq!(c.observe_gesture(&signal(Neutral, 2, true), 1500), ControlMode::Idle);
        assert_eq!(c.observe_gesture(&signal(Neutral, 2, true), 1700), ControlMode::SemiAutonomous);
        assert_eq!(c.state(), ControlState::SemiAutonomous(SemiPhase::Armed));
    }

    fn manual() -> Controller {
        Controller { state: ControlState::Manual, hold: None, consumed: None }
    }

    fn semi(phase: SemiPhase) -> Controller {
        Controller { state: ControlState::SemiAutonomous(phase), hold: None, consumed: None }
    }

    #[test]
    fn manual_streams_latest_target() {
        let mut c = manual();
        let cmd = c.tick(200, Some(target(0.4)), &signal(Neutral, 3, true), || None).unwrap();
        assert_eq!(cmd.kind, CommandKind::MoveEe { target: target(0.4) });
        assert_eq!(cmd.issued_at_ms, 200);
        let cmd = c.tick(400, None, &signal(Neutral, 3, true), || None).unwrap();
        assert_eq!(cmd.kind, CommandKind::Hold);
    }

    #[test]
    fn manual_fist_closes_gripper_once() {
        let mut c = manual();
        let fist = signal(ClosedFist, 0, true);
        assert_eq!(c.tick(0, Some(target(0.4)), &fist, || None).unwrap().kind, CommandKind::GripperClose);
        for t in 1..10 {
            let kind = c.tick(t * 200, Some(target(0.4)), &fist, || None).unwrap().kind;
            assert!(matches!(kind, CommandKind::MoveEe { .. }), "{kind:?}");
        }
        let open = signal(OpenPalm, 5, true);
        c.observe_gesture(&open, 2000);
        assert_eq!(c.tick(2000, Some(target(0.4)), &open, || None).unwrap().kind, CommandKind::GripperOpen);
    }

    #[test]
    fn semi_fist_triggers_grasp_with_selected_object() {
        let mut c = semi(SemiPhase::Armed);
        let cmd = c.tick(0, Some(target(0.4)), &signal(ClosedFist, 0, true), || Some("can".into())).unwrap();
        assert_eq!(cmd.kind, CommandKind::GraspObject { object_id: "can".into() });
        let mut c = semi(SemiPhase::Armed);
        assert_eq!(c.tick(0, None, &signal(ClosedFist, 0, true), || None), None);
        assert_eq!(c.tick(0, Some(target(0.4)), &signal(Neutral, 2, true), || None), None);
    }

    #[test]
    fn lifecycle_success_then_release() {
        let mut c = semi(SemiPhase::Armed);
        c.grasp_lifecycle(LifecycleEvent::GraspStarted).unwrap();
        assert_eq!(
            c.grasp_lifecycle(LifecycleEvent::GraspSucceeded).unwrap(),
            ControlState::SemiAutonomous(SemiPhase::Holding)
        );
        let open = signal(OpenPalm, 5, true);
        assert_eq!(c.tick(0, None, &open, || None).unwrap().kind, CommandKind::ReleaseObject);
        assert_eq!(
            c.grasp_lifecycle(LifecycleEvent::Released).unwrap(),
            ControlState::SemiAutonomous(SemiPhase::Armed)
        );
    }

    #[test]
    fn lifecycle_failure_rearms() {
        let mut c = semi(SemiPhase::Armed);
        let fist = signal(ClosedFist, 0, true);
        c.tick(0, None, &fist, || Some("a".into())).unwrap();
        c.grasp_lifecycle(LifecycleEvent::GraspStarted).unwrap();
        c.grasp_lifecycle(LifecycleEvent::GraspFailed).unwrap();
        assert_eq!(c.state(), ControlState::SemiAutonomous(SemiPhase::Armed));
        // a fresh fist (after the hand changes) may retry
        c.observe_gesture(&signal(Neutral, 2, false), 100);
        c.observe_gesture(&fist, 300);
        let cmd = c.tick(400, None, &fist, || Some("a".into())).unwrap();
        assert!(matches!(cmd.kind, CommandKind::GraspObject { .. }));
    }

    #[test]
    fn neutral_during_execution_aborts() {
        let mut c = semi(SemiPhase::Executing);
        assert_eq!(c.tick(0, None, &signal(ClosedFist, 0, true), || None), None);
        assert_eq!(c.tick(200, None, &signal(Neutral, 2, true), || None).unwrap().kind, CommandKind::Hold);
        c.grasp_lifecycle(LifecycleEvent::Aborted).unwrap();
        assert_eq!(c.state(), ControlState::SemiAutonomous(SemiPhase::Armed));
    }

    #[test]
    fn invalid_lifecycle_events() {
        let mut c = semi(SemiPhase::Armed);
        assert!(matches!(c.grasp_lifecycle(LifecycleEvent::Released), Err(ControlError::InvalidEvent { .. })));
        let mut c = manual();
        assert!(matches!(c.grasp_lifecycle(LifecycleEvent::GraspStarted), Err(ControlError::InvalidEvent { .. })));
    }

    /// Expected table written out case by case.
    fn expected(state: ControlState, label: GestureLabel, stable: bool, fresh: bool) -> Decision {
        use Decision as D;
        use SemiPhase::*;
        match (state, label, stable, fresh) {
            (ControlState::Idle, _, _, _) => D::Hold,
            (ControlState::Manual, OpenPalm, true, _) => D::GripperOpen,
            (ControlState::Manual, ClosedFist, true, _) => D::GripperClose,
            (ControlState::Manual, _, _, true) => D::MoveEe,
            (ControlState::Manual, _, _, false) => D::Hold,
            (ControlState::SemiAutonomous(Armed), ClosedFist, true, _) => D::GraspObject,
            (ControlState::SemiAutonomous(Armed), _, _, _) => D::Nothing,
            (ControlState::SemiAutonomous(Executing), Neutral, true, _) => D::Hold,
            (ControlState::SemiAutonomous(Executing), _, _, _) => D::Nothing,
            (ControlState::SemiAutonomous(Holding), OpenPalm, true, _) => D::ReleaseObject,
            (ControlState::SemiAutonomous(Holding), _, _, true) => D::MoveEe,
            (ControlState::SemiAutonomous(Holding), _, _, false) => D::Hold,
        }
    }

    #[test]
    fn table_is_exhaustive_and_matches() {
        let mut n = 0;
        for state in ControlState::ALL {
            for label in GestureLabel::ALL {
                for stable in [false, true] {
                    for fresh in [false, true] {
                        assert_eq!(decide(state, label, stable, fresh), expected(state, label, stable, fresh));
                        if !fresh {
                            assert_ne!(decide(state, label, stable, fresh), Decision::MoveEe);
                        }
                        n += 1;
                    }
                }
            }
        }
        assert_eq!(n, 60);
    }
}
