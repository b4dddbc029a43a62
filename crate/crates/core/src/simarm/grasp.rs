use serde::{Deserialize, Serialize};

use super::{ArmCommand, ArmSimulator, ArmState, GripperState, SafetyStatus, SceneObject, SimError};
use crate::control::TargetPose;
use crate::geometry::{Point3, RollQuaternion};

/// Height of the pre-grasp and lift waypoints above the object.
pub const GRASP_CLEARANCE_M: f64 = 0.10;
/// A waypoint counts as reached within this distance.
pub const WAYPOINT_TOLERANCE_M: f64 = 0.005;
const PHASE_TIMEOUT_S: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspPhase {
    PreGrasp,
    Descend,
    Close,
    Lift,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspFailure {
    /// The safety guard refused a move on the way.
    Blocked(GraspPhase),
    /// The gripper closed without capturing the selected object.
    NotCaptured,
    Timeout(GraspPhase),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutineStatus {
    Running(GraspPhase),
    Succeeded,
    Failed(GraspFailure),
    Aborted,
}

impl RoutineStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, RoutineStatus::Running(_))
    }
}

/// Top-down pick: pre-grasp above the object, descend, close, verify, lift.
#[derive(Debug, Clone)]
pub struct GraspRoutine {
    object_id: String,
    grasp_point: Point3,
    orientation: RollQuaternion,
    phase: GraspPhase,
    phase_elapsed_s: f64,
    status: RoutineStatus,
}

impl GraspRoutine {
    pub fn start(sim: &ArmSimulator, object: &SceneObject) -> Self {
        Self {
            object_id: object.id.clone(),
            grasp_point: object.position,
            orientation: sim.state().ee_pose().orientation,
            phase: GraspPhase::PreGrasp,
            phase_elapsed_s: 0.0,
            status: RoutineStatus::Running(GraspPhase::PreGrasp),
        }
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn status(&self) -> &RoutineStatus {
        &self.status
    }

    fn waypoint(&self) -> Point3 {
        match self.phase {
            GraspPhase::PreGrasp | GraspPhase::Lift => self.grasp_point + Point3::new(0.0, 0.0, GRASP_CLEARANCE_M),
            GraspPhase::Descend | GraspPhase::Close => self.grasp_point,
        }
    }

    /// Advances the routine by one simulator step.
    pub fn step(&mut self, sim: &mut ArmSimulator, dt_s: f64) -> Result<RoutineStatus, SimError> {
        if self.status.is_terminal() {
            return Ok(self.status.clone());
        }
        if self.phase == GraspPhase::Close {
            sim.step(&ArmCommand::GripperClose, dt_s)?;
            let captured = matches!(&sim.state().gripper, GripperState::Holding(id) if *id == self.object_id);
            return Ok(if captured {
                self.advance(GraspPhase::Lift)
            } else {
                sim.step(&ArmCommand::GripperOpen, dt_s)?;
                self.finish(RoutineStatus::Failed(GraspFailure::NotCaptured))
            });
        }

        let target = TargetPose { position_robot: self.waypoint(), orientation: self.orientation };
        let state = sim.step(&ArmCommand::MoveEe { target }, dt_s)?;
        if state.safety == SafetyStatus::Blocked {
            return Ok(self.finish(RoutineStatus::Failed(GraspFailure::Blocked(self.phase))));
        }
        self.phase_elapsed_s += dt_s;
        if state.ee_position().distance(self.waypoint()) <= WAYPOINT_TOLERANCE_M {
            return Ok(match self.phase {
                GraspPhase::PreGrasp => self.advance(GraspPhase::Descend),
                GraspPhase::Descend => self.advance(GraspPhase::Close),
                GraspPhase::Lift => self.finish(RoutineStatus::Succeeded),
                GraspPhase::Close => unreachable!(),
            });
        }
        if self.phase_elapsed_s > PHASE_TIMEOUT_S {
            return Ok(self.finish(RoutineStatus::Failed(GraspFailure::Timeout(self.phase))));
        }
        Ok(self.status.clone())
    }

    /// Operator intervention: open the gripper and hold the arm where it is.
    pub fn abort(&mut self, sim: &mut ArmSimulator, dt_s: f64) -> Result<RoutineStatus, SimError> {
        if self.status.is_terminal() {
            return Ok(self.status.clone());
        }
        sim.step(&ArmCommand::GripperOpen, dt_s)?;
        sim.step(&ArmCommand::Hold, dt_s)?;
        Ok(self.finish(RoutineStatus::Aborted))
    }

    /// Steps until the routine terminates, collecting every intermediate state.
    pub fn run_to_end(
        &mut self,
        sim: &mut ArmSimulator,
        dt_s: f64,
        max_steps: usize,
    ) -> Result<(Vec<ArmState>, RoutineStatus), SimError> {
        let mut states = Vec::new();
        for _ in 0..max_steps {
            let status = self.step(sim, dt_s)?;
            states.push(sim.state().clone());
            if status.is_terminal() {
                return Ok((states, status));
            }
        }
        Ok((states, self.status.clone()))
    }

    fn advance(&mut self, phase: GraspPhase) -> RoutineStatus {
        self.phase = phase;
        self.phase_elapsed_s = 0.0;
        self.status = RoutineStatus::Running(phase);
        self.status.clone()
    }

    fn finish(&mut self, status: RoutineStatus) -> RoutineStatus {
        self.status = status;
        self.status.clone()
    }
}
