//! Kinematic description of the simulated arm.
//!
//! The link parameters approximate a ~1 m reach 6-DoF arm. They are
//! configuration data for the simulator, not measurements of a real robot.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{rot_axis, rot_x, rot_y, rot_z, Point3};

pub const JOINT_COUNT: usize = 6;
pub type JointVector = [f64; JOINT_COUNT];

/// Identifier of the built-in model returned by [`ArmModel::desk_6dof`].
pub const DESK_6DOF_ID: &str = "desk-6dof-v1";

/// End-effector position of [`ArmModel::desk_6dof`] at `q = 0`.
pub const DESK_6DOF_HOME: Point3 = Point3::new(0.657_761_248_819_469_3, 0.0, -0.191_890_508_920_419_23);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Offset from the previous joint frame, meters.
    pub origin_xyz: [f64; 3],
    /// Fixed roll/pitch/yaw of the joint frame relative to the previous one, radians.
    #[serde(default)]
    pub origin_rpy: [f64; 3],
    /// Unit rotation axis in the joint frame.
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

impl JointSpec {
    fn origin_rotation(&self) -> Matrix3<f64> {
        let [r, p, y] = self.origin_rpy;
        rot_z(y) * rot_y(p) * rot_x(r)
    }
}

/// Points along the chain that link spheres are strung between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainPoint {
    /// Origin of joint `i` (0-based).
    Joint(usize),
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub name: String,
    pub from: ChainPoint,
    pub to: ChainPoint,
    pub radius_m: f64,
    pub spheres: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3,
    pub radius_m: f64,
}

impl Sphere {
    pub fn intersects(&self, other: &Sphere) -> bool {
        self.center.distance(other.center) < self.radius_m + other.radius_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: Point3,
    pub max: Point3,
}

impl WorkspaceBox {
    pub fn clamp(&self, p: Point3) -> Point3 {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.clamp(p) == p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub position_tolerance_m: f64,
    pub roll_tolerance_rad: f64,
    /// Meters of task error per radian of roll error.
    pub roll_weight_m: f64,
    /// Largest joint change per iteration, radians.
    pub max_step_rad: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_iterations: 100,
            position_tolerance_m: 1e-4,
            roll_tolerance_rad: 1e-3,
            roll_weight_m: 0.2,
            max_step_rad: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub id: String,
    pub joints: Vec<JointSpec>,
    pub tool_offset: [f64; 3],
    pub reach_m: f64,
    /// Usable reach is `reach_m - reach_margin_m`; targets are clamped to it.
    #[serde(default = "default_reach_margin")]
    pub reach_margin_m: f64,
    pub time_constant_s: f64,
    pub links: Vec<LinkGeometry>,
    /// Fixed spheres approximating the robot body the arm is mounted on.
    #[serde(default)]
    pub body: Vec<Sphere>,
    pub workspace: WorkspaceBox,
    #[serde(default)]
    pub ik: IkConfig,
}

fn default_reach_margin() -> f64 {
    0.02
}

/// Poses of every joint frame and the tool for one configuration.
#[derive(Debug, Clone)]
pub struct ChainPoses {
    pub joint_origins: [Vector3<f64>; JOINT_COUNT],
    pub joint_axes: [Vector3<f64>; JOINT_COUNT],
    pub tool_position: Vector3<f64>,
    pub tool_rotation: Matrix3<f64>,
}

impl ChainPoses {
    pub fn point(&self, p: ChainPoint) -> Vector3<f64> {
        match p {
            ChainPoint::Joint(i) => self.joint_origins[i],
            ChainPoint::Tool => self.tool_position,
        }
    }

    /// Roll about +x extracted as the ZYX Euler roll of the tool rotation.
    pub fn roll(&self) -> f64 {
        tool_roll(&self.tool_rotation)
    }
}

pub fn tool_roll(r: &Matrix3<f64>) -> f64 {
    r[(2, 1)].atan2(r[(2, 2)])
}

impl ArmModel {
    /// Built-in desk-scale model: base yaw, shoulder and elbow pitch, then a
    /// roll/pitch/roll wrist. Shoulder and base share the robot-frame origin.
    pub fn desk_6dof() -> Self {
        let joint = |xyz: [f64; 3], rpy: [f64; 3], axis: [f64; 3], lo: f64, hi: f64| JointSpec {
            origin_xyz: xyz,
            origin_rpy: rpy,
            axis,
            limits: [lo, hi],
        };
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        Self {
            id: DESK_6DOF_ID.to_string(),
            joints: vec![
                joint([0.0; 3], [0.0; 3], z, -2.9, 2.9),
                joint([0.0; 3], [0.0, -0.6, 0.0], y, -1.6, 1.4),
                joint([0.45, 0.0, 0.0], [0.0, 1.6, 0.0], y, -2.5, 1.3),
                joint([0.10, 0.0, 0.0], [0.0; 3], x, -2.9, 2.9),
                joint([0.30, 0.0, 0.0], [0.0; 3], y, -2.0, 2.0),
                joint([0.08, 0.0, 0.0], [0.0; 3], x, -2.9, 2.9),
            ],
            tool_offset: [0.05, 0.0, 0.0],
            reach_m: 0.98,
            reach_margin_m: default_reach_margin(),
            time_constant_s: 0.35,
            links: vec![
                LinkGeometry {
                    name: "upper_arm".into(),
                    from: ChainPoint::Joint(1),
                    to: ChainPoint::Joint(2),
                    radius_m: 0.06,
                    spheres: 5,
                },
                LinkGeometry {
                    name: "forearm".into(),
                    from: ChainPoint::Joint(2),
                    to: ChainPoint::Joint(4),
                    radius_m: 0.05,
                    spheres: 5,
                },
                LinkGeometry {
                    name: "hand".into(),
                    from: ChainPoint::Joint(4),
                    to: ChainPoint::Tool,
                    radius_m: 0.04,
                    spheres: 3,
                },
            ],
            body: vec![
                Sphere { center: Point3::new(-0.15, 0.0, -0.25), radius_m: 0.15 },
                Sphere { center: Point3::new(-0.45, 0.0, -0.25), radius_m: 0.15 },
            ],
            workspace: WorkspaceBox { min: Point3::new(-0.2, -0.8, -0.55), max: Point3::new(0.95, 0.8, 0.8) },
            ik: IkConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let model: ArmModel = toml::from_str(text).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn usable_reach(&self) -> f64 {
        self.reach_m - self.reach_margin_m
    }

    pub fn limits(&self, i: usize) -> (f64, f64) {
        let [lo, hi] = self.joints[i].limits;
        (lo, hi)
    }

    pub fn clamp_to_limits(&self, q: &mut JointVector) {
        for (i, v) in q.iter_mut().enumerate() {
            let (lo, hi) = self.limits(i);
            *v = v.clamp(lo, hi);
        }
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<(), SimError> {
        for (i, &v) in q.iter().enumerate() {
            let (lo, hi) = self.limits(i);
            if !(v >= lo && v <= hi) {
                return Err(SimError::JointLimit { joint: i, value: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Structural checks plus the reach consistency check.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.joints.len() != JOINT_COUNT {
            return Err(SimError::InvalidModel(format!("expected {JOINT_COUNT} joints, got {}", self.joints.len())));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let a = Vector3::from(j.axis);
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidModel(format!("joint {i} axis is not unit length")));
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(SimError::InvalidModel(format!("joint {i} limits are empty")));
            }
        }
        if !(self.time_constant_s > 0.0) {
            return Err(SimError::InvalidModel("time_constant_s must be positive".into()));
        }
        for l in &self.links {
            let bad = |p: ChainPoint| matches!(p, ChainPoint::Joint(i) if i >= JOINT_COUNT);
            if bad(l.from) || bad(l.to) || l.spheres == 0 || !(l.radius_m > 0.0) {
                return Err(SimError::InvalidModel(format!("link {} is malformed", l.name)));
            }
        }
        let max = self.max_reach();
        if (max - self.reach_m).abs() > 1e-3 {
            return Err(SimError::InvalidModel(format!(
                "declared reach {:.4} m does not match kinematic maximum {:.4} m",
                self.reach_m, max
            )));
        }
        Ok(())
    }

    /// Largest |FK(q)| over the joint limits, found by projected gradient
    /// ascent from a fixed set of seeds.
    pub fn max_reach(&self) -> f64 {
        let mut best: f64 = 0.0;
        for seed in 0..16 {
            let mut q = [0.0; JOINT_COUNT];
            for (i, v) in q.iter_mut().enumerate() {
                let (lo, hi) = self.limits(i);
                let t = ((seed * 7 + i * 3) % 16) as f64 / 15.0;
                *v = lo + (hi - lo) * t;
            }
            for _ in 0..400 {
                let c = self.chain(&q);
                let p = c.tool_position;
                let mut moved = 0.0;
                for i in 0..JOINT_COUNT {
                    // d|p|²/dq_i = 2 p·(z_i × (p − o_i))
                    let g = p.dot(&c.joint_axes[i].cross(&(p - c.joint_origins[i])));
                    let (lo, hi) = self.limits(i);
                    let nq = (q[i] + 0.5 * g).clamp(lo, hi);
                    moved += (nq - q[i]).abs();
                    q[i] = nq;
                }
                if moved < 1e-12 {
                    break;
                }
            }
            best = best.max(self.chain(&q).tool_position.norm());
        }
        best
    }

    /// Chain product without limit checks.
    pub fn chain(&self, q: &JointVector) -> ChainPoses {
        let mut r = Matrix3::identity();
        let mut p = Vector3::zeros();
        let mut joint_origins = [Vector3::zeros(); JOINT_COUNT];
        let mut joint_axes = [Vector3::zeros(); JOINT_COUNT];
        for (i, j) in self.joints.iter().enumerate() {
            p += r * Vector3::from(j.origin_xyz);
            r *= j.origin_rotation();
            let axis = Vector3::from(j.axis);
            joint_origins[i] = p;
            joint_axes[i] = r * axis;
            r *= rot_axis(&axis, q[i]);
        }
        let tool_position = p + r * Vector3::from(self.tool_offset);
        ChainPoses { joint_origins, joint_axes, tool_position, tool_rotation: r }
    }

    /// Bounding spheres of every moving link for configuration `q`, grouped by link.
    pub fn link_spheres(&self, q: &JointVector) -> Vec<Vec<Sphere>> {
        let c = self.chain(q);
        self.links
            .iter()
            .map(|l| {
                let (a, b) = (c.point(l.from), c.point(l.to));
                (0..l.spheres)
                    .map(|k| {
                        let t = if l.spheres == 1 { 0.5 } else { k as f64 / (l.spheres - 1) as f64 };
                        Sphere { center: Point3::from_vector(&(a + (b - a) * t)), radius_m: l.radius_m }
                    })
                    .collect()
            })
            .collect()
    }
}
