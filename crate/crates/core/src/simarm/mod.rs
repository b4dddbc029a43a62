//! Simulated 6-DoF arm with a jaw gripper.
//!
//! Stands in for the real manipulator: forward kinematics, damped
//! least-squares IK, first-order end-effector tracking, a sphere-based
//! collision guard, object selection and an autonomous grasp routine.

mod grasp;
mod model;

use std::collections::BTreeMap;

use nalgebra::{Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grasp::{GraspFailure, GraspPhase, GraspRoutine, RoutineStatus, GRASP_CLEARANCE_M, WAYPOINT_TOLERANCE_M};
pub use model::{
    tool_roll, ArmModel, ChainPoint, ChainPoses, IkConfig, JointSpec, JointVector, LinkGeometry, Sphere, WorkspaceBox,
    DESK_6DOF_HOME, DESK_6DOF_ID, JOINT_COUNT,
};

use crate::control::TargetPose;
use crate::geometry::{wrap_angle, Point3, RollQuaternion};

/// Obstacles are inflated by this much for every collision test.
pub const OBSTACLE_INFLATION_M: f64 = 0.02;
/// A closing gripper captures a graspable object whose center is this close.
pub const GRASP_CAPTURE_RADIUS_M: f64 = 0.05;
/// Two confidences closer than this are treated as tied.
pub const CONFIDENCE_TIE_EPS: f64 = 1e-6;
pub const MAX_STEP_DT_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("joint {joint} at {value:.4} rad is outside [{lo:.4}, {hi:.4}]")]
    JointLimit { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("IK did not converge after {} iterations (position residual {:.3e} m, roll residual {:.3e} rad)", .best.iterations, .best.position_residual_m, .best.roll_residual_rad)]
    NoConvergence { best: IkSolution },
    #[error("no eligible object to grasp")]
    NoTarget,
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("step dt {0} s is outside (0, 0.5]")]
    InvalidDt(f64),
    #[error("unknown object {0:?}")]
    UnknownObject(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub position: Point3,
    pub orientation: RollQuaternion,
}

/// Forward kinematics with limit checking.
pub fn fk(model: &ArmModel, q: &JointVector) -> Result<EePose, SimError> {
    model.check_limits(q)?;
    Ok(ee_pose_unchecked(model, q))
}

fn ee_pose_unchecked(model: &ArmModel, q: &JointVector) -> EePose {
    let c = model.chain(q);
    EePose { position: Point3::from_vector(&c.tool_position), orientation: RollQuaternion::from_x_rotation(c.roll()) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub position_residual_m: f64,
    pub roll_residual_rad: f64,
}

/// Damped least-squares IK on position plus roll about +x.
///
/// Joint limits are enforced by clamping after every update. On failure the
/// best iterate found is returned inside [`SimError::NoConvergence`].
pub fn ik(target: &TargetPose, q_seed: &JointVector, model: &ArmModel) -> Result<IkSolution, SimError> {
    let cfg = &model.ik;
    let goal = target.position_robot.to_vector();
    let goal_roll = target.orientation.x_rotation();
    let mut q = *q_seed;
    model.clamp_to_limits(&mut q);

    let mut best: Option<(f64, IkSolution)> = None;
    for iteration in 0..=cfg.max_iterations {
        let c = model.chain(&q);
        let ep = goal - c.tool_position;
        let er = wrap_angle(goal_roll - c.roll());
        let sol = IkSolution { q, iterations: iteration, position_residual_m: ep.norm(), roll_residual_rad: er.abs() };
        if sol.position_residual_m <= cfg.position_tolerance_m && sol.roll_residual_rad <= cfg.roll_tolerance_rad {
            return Ok(sol);
        }
        let score = sol.position_residual_m + cfg.roll_weight_m * sol.roll_residual_rad;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, sol));
        }
        if iteration == cfg.max_iterations {
            break;
        }

        let j = task_jacobian(&c, cfg.roll_weight_m);
        let e = Vector4::new(ep.x, ep.y, ep.z, cfg.roll_weight_m * er);
        let jjt = j * j.transpose() + Matrix4::identity() * (cfg.damping * cfg.damping);
        let Some(y) = jjt.lu().solve(&e) else { break };
        let mut dq = j.transpose() * y;
        let largest = dq.amax();
        if largest > cfg.max_step_rad {
            dq *= cfg.max_step_rad / largest;
        }
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        model.clamp_to_limits(&mut q);
    }
    Err(SimError::NoConvergence { best: best.expect("at least one iterate").1 })
}

/// Rows 0–2: position; row 3: weighted ZYX roll.
fn task_jacobian(c: &ChainPoses, roll_weight: f64) -> SMatrix<f64, 4, JOINT_COUNT> {
    let p = c.tool_position;
    let r = &c.tool_rotation;
    let (r21, r22) = (r[(2, 1)], r[(2, 2)]);
    let denom = r21 * r21 + r22 * r22;
    let mut j = SMatrix::<f64, 4, JOINT_COUNT>::zeros();
    for i in 0..JOINT_COUNT {
        let z = c.joint_axes[i];
        let lin = z.cross(&(p - c.joint_origins[i]));
        j[(0, i)] = lin.x;
        j[(1, i)] = lin.y;
        j[(2, i)] = lin.z;
        if denom > 1e-12 {
            // dR/dq_i = [z]ₓ R; only row 2 matters for the roll angle
            let d21 = z.x * r[(1, 1)] - z.y * r[(0, 1)];
            let d22 = z.x * r[(1, 2)] - z.y * r[(0, 2)];
            j[(3, i)] = roll_weight * (r22 * d21 - r21 * d22) / denom;
        }
    }
    j
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "object_id")]
pub enum GripperState {
    Open,
    Closed,
    Holding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyStatus {
    Ok,
    Clamped,
    Blocked,
}

/// Arm snapshot. The end-effector pose is always derived from `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    q: JointVector,
    ee: EePose,
    pub gripper: GripperState,
    pub safety: SafetyStatus,
}

impl ArmState {
    pub fn at(model: &ArmModel, q: JointVector) -> Result<Self, SimError> {
        let ee = fk(model, &q)?;
        Ok(Self { q, ee, gripper: GripperState::Open, safety: SafetyStatus::Ok })
    }

    pub fn q(&self) -> &JointVector {
        &self.q
    }

    pub fn ee_pose(&self) -> &EePose {
        &self.ee
    }

    pub fn ee_position(&self) -> Point3 {
        self.ee.position
    }

    pub fn held_object(&self) -> Option<&str> {
        match &self.gripper {
            GripperState::Holding(id) => Some(id),
            _ => None,
        }
    }

    fn set_q(&mut self, model: &ArmModel, q: JointVector) {
        self.q = q;
        self.ee = ee_pose_unchecked(model, &q);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub class_label: String,
    pub position: Point3,
    pub confidence: f64,
    #[serde(default = "default_true")]
    pub graspable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point3,
    pub radius_m: f64,
}

impl Obstacle {
    pub fn inflated(&self) -> Sphere {
        Sphere { center: self.center, radius_m: self.radius_m + OBSTACLE_INFLATION_M }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// Classes the operator may grasp semi-autonomously.
    #[serde(default)]
    pub allowed_classes: Vec<String>,
    /// Drop-off region for pick-and-place tasks.
    #[serde(default)]
    pub place_zone: Option<WorkspaceBox>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SimError> {
        for o in &self.objects {
            if !(0.0..=1.0).contains(&o.confidence) {
                return Err(SimError::InvalidScene(format!(
                    "object {} confidence {} not in [0, 1]",
                    o.id, o.confidence
                )));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius_m > 0.0) {
                return Err(SimError::InvalidScene(format!("obstacle {i} radius must be positive")));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Highest confidence wins; near-ties go to the object closest to `ee`.
pub fn select_object<'a>(
    objects: &'a [SceneObject],
    ee: Point3,
    allowed: &[String],
) -> Result<&'a SceneObject, SimError> {
    let eligible: Vec<&SceneObject> =
        objects.iter().filter(|o| o.graspable && allowed.contains(&o.class_label)).collect();
    let top = eligible.iter().map(|o| o.confidence).fold(f64::NEG_INFINITY, f64::max);
    eligible
        .into_iter()
        .filter(|o| top - o.confidence < CONFIDENCE_TIE_EPS)
        .min_by(|a, b| a.position.distance(ee).total_cmp(&b.position.distance(ee)))
        .ok_or(SimError::NoTarget)
}

/// Commands the simulator executes directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArmCommand {
    MoveEe { target: TargetPose },
    GripperOpen,
    GripperClose,
    Hold,
}

/// Which collision test rejected a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Collision {
    PathThroughObstacle(usize),
    LinkObstacle { link: String, obstacle: usize },
    SelfContact { a: String, b: String },
}

fn segment_point_distance(a: Point3, b: Point3, p: Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t).distance(p)
}

/// Checks link spheres against inflated obstacles, the body, and each other
/// (non-adjacent links only; the body counts as the link before the first).
pub fn check_configuration(model: &ArmModel, q: &JointVector, obstacles: &[Obstacle]) -> Result<(), Collision> {
    let links = model.link_spheres(q);
    for (li, spheres) in links.iter().enumerate() {
        for (oi, o) in obstacles.iter().enumerate() {
            let inflated = o.inflated();
            if spheres.iter().any(|s| s.intersects(&inflated)) {
                return Err(Collision::LinkObstacle { link: model.links[li].name.clone(), obstacle: oi });
            }
        }
        // the body is adjacent to link 0 only
        if li >= 1 && spheres.iter().any(|s| model.body.iter().any(|b| s.intersects(b))) {
            return Err(Collision::SelfContact { a: "body".into(), b: model.links[li].name.clone() });
        }
        for (lj, others) in links.iter().enumerate().skip(li + 2) {
            if spheres.iter().any(|s| others.iter().any(|o| s.intersects(o))) {
                return Err(Collision::SelfContact {
                    a: model.links[li].name.clone(),
                    b: model.links[lj].name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Owns the arm state and the scene; stepped by exactly one caller.
#[derive(Debug, Clone)]
pub struct ArmSimulator {
    model: ArmModel,
    scene: Scene,
    state: ArmState,
    rest_heights: BTreeMap<String, f64>,
    last_collision: Option<Collision>,
}

impl ArmSimulator {
    pub fn new(model: ArmModel, scene: Scene) -> Result<Self, SimError> {
        Self::with_joints(model, scene, [0.0; JOINT_COUNT])
    }

    pub fn with_joints(model: ArmModel, scene: Scene, q: JointVector) -> Result<Self, SimError> {
        model.validate()?;
        scene.validate()?;
        let state = ArmState::at(&model, q)?;
        if let Err(c) = check_configuration(&model, &q, &scene.obstacles) {
            return Err(SimError::InvalidScene(format!("initial configuration collides: {c:?}")));
        }
        let rest_heights = scene.objects.iter().map(|o| (o.id.clone(), o.position.z)).collect();
        Ok(Self { model, scene, state, rest_heights, last_collision: None })
    }

    pub fn model(&self) -> &ArmModel {
        &self.model
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &ArmState {
        &self.state
    }

    pub fn last_collision(&self) -> Option<&Collision> {
        self.last_collision.as_ref()
    }

    /// Clamps a target into the workspace box and the usable reach sphere.
    pub fn clamp_target(&self, p: Point3) -> (Point3, bool) {
        let boxed = self.model.workspace.clamp(p);
        let r = boxed.norm();
        let reach = self.model.usable_reach();
        let clamped = if r > reach { boxed * (reach / r) } else { boxed };
        (clamped, clamped != p)
    }

    pub fn step(&mut self, cmd: &ArmCommand, dt_s: f64) -> Result<&ArmState, SimError> {
        if !(dt_s > 0.0 && dt_s <= MAX_STEP_DT_S) {
            return Err(SimError::InvalidDt(dt_s));
        }
        self.last_collision = None;
        match cmd {
            ArmCommand::MoveEe { target } => self.move_toward(target, dt_s),
            ArmCommand::GripperClose => {
                self.close_gripper();
                self.state.safety = SafetyStatus::Ok;
            }
            ArmCommand::GripperOpen => {
                self.open_gripper();
                self.state.safety = SafetyStatus::Ok;
            }
            ArmCommand::Hold => self.state.safety = SafetyStatus::Ok,
        }
        Ok(&self.state)
    }

    fn move_toward(&mut self, target: &TargetPose, dt_s: f64) {
        let (goal, clamped) = self.clamp_target(target.position_robot);
        let ee = self.state.ee.position;
        for (i, o) in self.scene.obstacles.iter().enumerate() {
            let s = o.inflated();
            if segment_point_distance(ee, goal, s.center) < s.radius_m {
                self.block(Collision::PathThroughObstacle(i));
                return;
            }
        }

        let k = 1.0 - (-dt_s / self.model.time_constant_s).exp();
        let next = ee + (goal - ee) * k;
        let roll = self.state.ee.orientation.x_rotation();
        let next_roll = roll + k * wrap_angle(target.orientation.x_rotation() - roll);
        let sub_target = TargetPose { position_robot: next, orientation: RollQuaternion::from_x_rotation(next_roll) };
        let q = match ik(&sub_target, &self.state.q, &self.model) {
            Ok(sol) => sol.q,
            Err(SimError::NoConvergence { best }) => best.q,
            Err(_) => return,
        };
        if let Err(c) = check_configuration(&self.model, &q, &self.scene.obstacles) {
            self.block(c);
            return;
        }
        self.state.set_q(&self.model, q);
        self.state.safety = if clamped { SafetyStatus::Clamped } else { SafetyStatus::Ok };
        self.carry_held_object();
    }

    fn block(&mut self, c: Collision) {
        log::debug!("move blocked: {c:?}");
        self.last_collision = Some(c);
        self.state.safety = SafetyStatus::Blocked;
    }

    fn carry_held_object(&mut self) {
        if let GripperState::Holding(id) = &self.state.gripper {
            let ee = self.state.ee.position;
            if let Some(o) = self.scene.objects.iter_mut().find(|o| o.id == *id) {
                o.position = ee;
            }
        }
    }

    fn close_gripper(&mut self) {
        if matches!(self.state.gripper, GripperState::Holding(_)) {
            return;
        }
        let ee = self.state.ee.position;
        let captured = self
            .scene
            .objects
            .iter()
            .filter(|o| o.graspable && o.position.distance(ee) <= GRASP_CAPTURE_RADIUS_M)
            .min_by(|a, b| a.position.distance(ee).total_cmp(&b.position.distance(ee)));
        self.state.gripper = match captured {
            Some(o) => GripperState::Holding(o.id.clone()),
            None => GripperState::Closed,
        };
        self.carry_held_object();
    }

    fn open_gripper(&mut self) {
        if let GripperState::Holding(id) = &self.state.gripper {
            let ee = self.state.ee.position;
            let rest = self.rest_heights.get(id).copied().unwrap_or(ee.z);
            if let Some(o) = self.scene.objects.iter_mut().find(|o| o.id == *id) {
                o.position = Point3::new(ee.x, ee.y, rest);
            }
        }
        self.state.gripper = GripperState::Open;
    }
}

#[cfg(test)]
mod tests;
