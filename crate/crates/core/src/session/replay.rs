use super::metrics::{compute_metrics, ErrorSummary, PrecisionReport, TimedPoint};
use super::{SessionError, SessionRecord};
use crate::pipeline::{arm_model_by_id, Engine, EngineConfig, EngineError, EngineEvent, DEFAULT_STALE_AFTER_MS};
use crate::simarm::ArmState;
use crate::tracking::TrackedWrist;

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    /// Latest filtered wrist after each frame (absent until the first track).
    pub wrist: Vec<TrackedWrist>,
    /// Arm state after each frame.
    pub arm: Vec<ArmState>,
    pub events: Vec<EngineEvent>,
    pub report: PrecisionReport,
}

/// Re-runs the whole pipeline over the recorded frames at their recorded
/// timestamps.
///
/// Errors are sampled once per frame while the arm is being streamed a pose:
/// the main series is |commanded target − end effector|; tracked target vs
/// ground truth and ground truth vs end effector are summarized separately.
pub fn replay(record: &SessionRecord) -> Result<ReplayOutput, SessionError> {
    let h = &record.header;
    let arm = arm_model_by_id(&h.arm_model).map_err(|source| SessionError::Replay { t_ms: 0, source })?;
    let mut engine = Engine::new(EngineConfig {
        intrinsics: h.intrinsics,
        filter: h.filter,
        marker_from_camera: h.marker_from_camera,
        robot_from_marker: h.robot_from_marker,
        arm,
        scene: h.scene.clone(),
        stale_after_ms: DEFAULT_STALE_AFTER_MS,
    })
    .map_err(|source| SessionError::Replay { t_ms: 0, source })?;

    let truth = record.truth_by_time();
    let mut wrist = Vec::with_capacity(record.frames.len());
    let mut arm_states = Vec::with_capacity(record.frames.len());
    let mut events = Vec::new();
    let mut reference = Vec::new();
    let mut ee = Vec::new();
    let mut tracking_errors = Vec::new();
    let mut end_to_end_errors = Vec::new();

    for frame in &record.frames {
        let t_ms = frame.t_ms;
        engine.process_frame(frame).map_err(|source: EngineError| SessionError::Replay { t_ms, source })?;
        events.extend(engine.drain_events());
        if let Some(w) = engine.latest_wrist() {
            wrist.push(*w);
        }
        let state = engine.arm_state().clone();
        let ee_now = state.ee_position();
        arm_states.push(state);

        let gt = truth.get(&t_ms).copied();
        if let (Some(gt), Some(w)) = (gt, engine.latest_wrist()) {
            if w.fresh && w.timestamp_ms == t_ms {
                tracking_errors.push(engine.wrist_robot().expect("wrist present").distance(gt));
            }
        }
        if engine.routine_status().is_none() {
            if let Some(target) = engine.active_target() {
                reference.push(TimedPoint { t_ms, p: target.position_robot });
                ee.push(TimedPoint { t_ms, p: ee_now });
                if let Some(gt) = gt {
                    end_to_end_errors.push(gt.distance(ee_now));
                }
            }
        }
    }

    let mut report = compute_metrics(&reference, &ee)?;
    report.tracking = ErrorSummary::from_errors(&tracking_errors);
    report.end_to_end = ErrorSummary::from_errors(&end_to_end_errors);
    report.add_segments(&h.segments);
    Ok(ReplayOutput { wrist, arm: arm_states, events, report })
}
