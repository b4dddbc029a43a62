//! Synthetic session generation: a piecewise-linear wrist path in the robot
//! frame, pushed through a virtual camera to pixels and depth.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SegmentInfo, SessionError, SessionHeader, SessionRecord, TruthSample, SCHEMA_VERSION};
use crate::frame::{LandmarkFrame, MarkerDetection, WristObservation};
use crate::geometry::{matrix_to_rows, CameraIntrinsics, Point3, RigidTransform};
use crate::handpose::synthetic::{fingers_for_count, SyntheticHand};
use crate::simarm::{Scene, DESK_6DOF_ID};
use crate::tracking::FilterConfig;

pub const FRAME_RATE_HZ: u64 = 30;
/// Keep the wrist this many pixels inside the image so the depth window fits.
const EDGE_MARGIN_PX: f64 = 2.0;

/// Timestamp of frame `k` at the fixed frame rate, rounded to the millisecond.
pub fn frame_time_ms(k: u64) -> u64 {
    (k * 1000 + FRAME_RATE_HZ / 2) / FRAME_RATE_HZ
}

/// Robot frame with x toward the camera, y to the image right, z up; the
/// marker frame origin sits at (0.55, 0, 0.1) in it.
pub fn default_robot_from_marker() -> RigidTransform {
    let r = Matrix3::new(0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    RigidTransform::new(r, Vector3::new(0.55, 0.0, 0.1)).expect("proper rotation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SegmentSpec {
    Move { to: Point3, speed_mps: f64 },
    Dwell { duration_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub pixel_std_px: f64,
    pub depth_std_mm: f64,
    /// Probability that an individual depth reading is missing (reported as 0).
    pub dropout_prob: f64,
}

/// A sudden wrist displacement from `at_ms` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Teleport {
    pub at_ms: u64,
    pub offset: Point3,
}

/// One entry of the hand-pose script; the last entry persists to the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureStep {
    pub fingers: u8,
    pub duration_ms: u64,
    #[serde(default)]
    pub palm_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "CameraIntrinsics::vga_default")]
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Distance of the marker in front of the camera along the optical axis.
    #[serde(default = "default_camera_distance")]
    pub camera_distance_m: f64,
    #[serde(default = "default_robot_from_marker")]
    pub robot_from_marker: RigidTransform,
    /// Put the camera→marker transform in the header instead of sending a
    /// marker detection with the first frame.
    #[serde(default)]
    pub preset_calibration: bool,
    #[serde(default = "default_arm")]
    pub arm_model: String,
    #[serde(default)]
    pub scene: Scene,
    /// Wrist start position, robot frame.
    pub start: Point3,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub teleports: Vec<Teleport>,
    #[serde(default)]
    pub gestures: Vec<GestureStep>,
}

fn default_camera_distance() -> f64 {
    1.6
}

fn default_arm() -> String {
    DESK_6DOF_ID.to_string()
}

impl TrajectorySpec {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::InvalidSpec(e.to_string()))
    }

    pub fn duration_ms(&self) -> u64 {
        let mut pos = self.start;
        let mut total = 0.0;
        for seg in &self.segments {
            match seg {
                SegmentSpec::Move { to, speed_mps } => {
                    total += pos.distance(*to) / speed_mps * 1000.0;
                    pos = *to;
                }
                SegmentSpec::Dwell { duration_ms } => total += *duration_ms as f64,
            }
        }
        total.round() as u64
    }

    pub fn camera_from_marker(&self) -> RigidTransform {
        RigidTransform::from_translation(Point3::new(0.0, 0.0, self.camera_distance_m))
    }

    fn camera_from_robot(&self) -> RigidTransform {
        compose_camera_from_robot(&self.camera_from_marker(), &self.robot_from_marker)
    }

    /// Per-move-segment timing and the piecewise-linear path as (t_ms, point) knots.
    fn knots(&self) -> (Vec<(f64, Point3)>, Vec<SegmentInfo>) {
        let mut knots = vec![(0.0, self.start)];
        let mut infos = Vec::new();
        for seg in &self.segments {
            let &(t0, p0) = knots.last().expect("non-empty");
            match seg {
                SegmentSpec::Move { to, speed_mps } => {
                    let t1 = t0 + p0.distance(*to) / speed_mps * 1000.0;
                    infos.push(SegmentInfo {
                        start_ms: t0.round() as u64,
                        end_ms: t1.round() as u64,
                        speed_mps: *speed_mps,
                    });
                    knots.push((t1, *to));
                }
                SegmentSpec::Dwell { duration_ms } => knots.push((t0 + *duration_ms as f64, p0)),
            }
        }
        (knots, infos)
    }

    fn validate(&self) -> Result<(), SessionError> {
        let infeasible = |parameter: String, reason: String| SessionError::InfeasibleSpec { parameter, reason };
        if !(self.camera_distance_m > 0.0) {
            return Err(infeasible("camera_distance_m".into(), "must be positive".into()));
        }
        let frame_s = 1.0 / FRAME_RATE_HZ as f64;
        for (i, seg) in self.segments.iter().enumerate() {
            if let SegmentSpec::Move { speed_mps, .. } = seg {
                if !(*speed_mps > 0.0 && speed_mps.is_finite()) {
                    return Err(infeasible(format!("segments[{i}].speed_mps"), "must be positive".into()));
                }
                if speed_mps * frame_s > self.filter.jump_threshold_m {
                    return Err(infeasible(
                        format!("segments[{i}].speed_mps"),
                        format!(
                            "{speed_mps} m/s moves more than the {} m jump threshold between frames",
                            self.filter.jump_threshold_m
                        ),
                    ));
                }
            }
        }
        let n = &self.noise;
        if !(n.pixel_std_px >= 0.0 && n.depth_std_mm >= 0.0 && (0.0..=1.0).contains(&n.dropout_prob)) {
            return Err(SessionError::InvalidSpec("noise levels must be non-negative, dropout in [0, 1]".into()));
        }

        // the frustum is convex, so checking path endpoints covers every segment
        let mut points = vec![("start".to_string(), self.start)];
        for (i, seg) in self.segments.iter().enumerate() {
            if let SegmentSpec::Move { to, .. } = seg {
                points.push((format!("segments[{i}].to"), *to));
            }
        }
        let mut offset = Point3::ORIGIN;
        let mut shifted = Vec::new();
        for (i, tp) in self.teleports.iter().enumerate() {
            offset = offset + tp.offset;
            shifted.extend(points.iter().map(|(_, p)| (format!("teleports[{i}].offset"), *p + offset)));
        }
        points.extend(shifted);
        for (name, p) in points {
            self.pixel_of(p).map_err(|reason| infeasible(name, reason))?;
        }
        Ok(())
    }

    /// Ideal pixel and depth of a robot-frame point.
    fn pixel_of(&self, p_robot: Point3) -> Result<(f64, f64, f64), String> {
        let pc = self.camera_from_robot().apply(p_robot);
        let k = &self.intrinsics;
        let Some((u, v)) = k.project(pc) else {
            return Err(format!("point {} is behind the camera", p_robot));
        };
        let inside = u >= EDGE_MARGIN_PX
            && v >= EDGE_MARGIN_PX
            && u <= k.width() as f64 - 1.0 - EDGE_MARGIN_PX
            && v <= k.height() as f64 - 1.0 - EDGE_MARGIN_PX;
        if !inside {
            return Err(format!("point {} projects to ({u:.1}, {v:.1}), outside the image", p_robot));
        }
        let depth_mm = pc.z * 1000.0;
        if !(1.0..=65535.0).contains(&depth_mm) {
            return Err(format!("depth {depth_mm:.0} mm is outside the sensor range"));
        }
        Ok((u, v, depth_mm))
    }

    fn gesture_at(&self, t_ms: u64) -> Option<&GestureStep> {
        let mut elapsed = 0;
        for g in &self.gestures {
            elapsed += g.duration_ms;
            if t_ms < elapsed {
                return Some(g);
            }
        }
        self.gestures.last()
    }
}

fn compose_camera_from_robot(
    camera_from_marker: &RigidTransform,
    robot_from_marker: &RigidTransform,
) -> RigidTransform {
    robot_from_marker.inverse().then(camera_from_marker)
}

fn position_at(knots: &[(f64, Point3)], t_ms: f64) -> Point3 {
    let i = knots.partition_point(|(t, _)| *t <= t_ms);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[i - 1].1;
    }
    let (t0, p0) = knots[i - 1];
    let (t1, p1) = knots[i];
    if t1 <= t0 {
        return p1;
    }
    p0 + (p1 - p0) * ((t_ms - t0) / (t1 - t0))
}

/// Builds a 30 Hz synthetic session from a trajectory spec.
pub fn generate_synthetic(spec: &TrajectorySpec) -> Result<SessionRecord, SessionError> {
    spec.validate()?;
    let (knots, segments) = spec.knots();
    let duration = spec.duration_ms();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pixel_noise =
        Normal::new(0.0, spec.noise.pixel_std_px).map_err(|e| SessionError::InvalidSpec(e.to_string()))?;
    let depth_noise =
        Normal::new(0.0, spec.noise.depth_std_mm).map_err(|e| SessionError::InvalidSpec(e.to_string()))?;
    let k = spec.intrinsics;
    let window = spec.filter.depth_window.max(1);

    let mut frames = Vec::new();
    let mut ground_truth = Vec::new();
    for i in 0.. {
        let t_ms = frame_time_ms(i);
        if t_ms > duration {
            break;
        }
        let offset =
            spec.teleports.iter().filter(|tp| tp.at_ms <= t_ms).fold(Point3::ORIGIN, |acc, tp| acc + tp.offset);
        let truth = position_at(&knots, t_ms as f64) + offset;
        let (u0, v0, depth0) = spec
            .pixel_of(truth)
            .map_err(|reason| SessionError::InfeasibleSpec { parameter: format!("trajectory at {t_ms} ms"), reason })?;
        let u = u0 + pixel_noise.sample(&mut rng);
        let v = v0 + pixel_noise.sample(&mut rng);
        let mut reading = || {
            let d = (depth0 + depth_noise.sample(&mut rng)).round().clamp(1.0, 65535.0) as u16;
            if rng.gen_bool(spec.noise.dropout_prob) {
                0
            } else {
                d
            }
        };
        let depth_window: Vec<u16> = (0..window * window).map(|_| reading()).collect();
        let depth_mm = depth_window[depth_window.len() / 2];

        let hand = spec.gesture_at(t_ms).map(|g| {
            let mut hand = SyntheticHand::new(fingers_for_count(g.fingers), g.palm_angle);
            hand.wrist = Point3::new(u / k.width() as f64, v / k.height() as f64, 0.0);
            hand.landmarks()
        });
        let marker = (i == 0 && !spec.preset_calibration).then(|| {
            let cfm = spec.camera_from_marker();
            MarkerDetection { rotation: matrix_to_rows(cfm.rotation()), translation: cfm.translation().into() }
        });

        frames.push(LandmarkFrame {
            t_ms,
            wrist: Some(WristObservation { u, v, depth_mm, depth_window }),
            hand,
            marker,
        });
        ground_truth.push(TruthSample { t_ms, wrist_robot: truth });
    }

    let header = SessionHeader {
        schema_version: SCHEMA_VERSION,
        intrinsics: spec.intrinsics,
        filter: spec.filter,
        marker_from_camera: spec.preset_calibration.then(|| spec.camera_from_marker().inverse()),
        robot_from_marker: spec.robot_from_marker,
        arm_model: spec.arm_model.clone(),
        scene: spec.scene.clone(),
        segments,
    };
    Ok(SessionRecord { header, frames, ground_truth })
}
