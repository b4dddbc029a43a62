//! Hand orientation and gestures from 21-point hand landmarks.
//!
//! Landmark indexing follows the common 21-point hand model: 0 is the wrist,
//! 1–4 the thumb (CMC, MCP, IP, tip), then four landmarks (MCP, PIP, DIP, tip)
//! for each of the index (5–8), middle (9–12), ring (13–16) and little
//! (17–20) fingers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RollQuaternion};

pub const LANDMARK_COUNT: usize = 21;
pub const WRIST: usize = 0;
pub const THUMB_IP: usize = 3;
pub const THUMB_TIP: usize = 4;
pub const INDEX_MCP: usize = 5;
pub const LITTLE_MCP: usize = 17;

/// (PIP, tip) landmark indices of the four long fingers.
const FINGER_PIP_TIP: [(usize, usize); 4] = [(6, 8), (10, 12), (14, 16), (18, 20)];

/// Normalized-distance margin a tip must clear to count as raised.
pub const FINGER_EXTENSION_MARGIN: f64 = 0.15;
/// Consecutive identical raw labels required before a gesture is stable.
pub const DEBOUNCE_FRAMES: usize = 5;
/// How long the pre-grasp orientation is frozen once a fist becomes stable.
pub const GRASP_ORIENTATION_HOLD_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HandError {
    #[error("hand landmarks must contain exactly 21 points, got {0}")]
    WrongLandmarkCount(usize),
    #[error("hand landmarks contain non-finite values")]
    NonFinite,
    #[error("wrist and little-finger MCP coincide; hand scale is undefined")]
    DegenerateHand,
    #[error("wrist, index MCP and little-finger MCP are collinear; palm normal is undefined")]
    DegeneratePalm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct HandLandmarks {
    points: [Point3; LANDMARK_COUNT],
}

impl HandLandmarks {
    pub fn new(points: [Point3; LANDMARK_COUNT]) -> Result<Self, HandError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(HandError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3; LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn map(&self, f: impl Fn(Point3) -> Point3) -> Self {
        Self { points: self.points.map(f) }
    }
}

impl TryFrom<Vec<[f64; 3]>> for HandLandmarks {
    type Error = HandError;
    fn try_from(v: Vec<[f64; 3]>) -> Result<Self, HandError> {
        let points: [Point3; LANDMARK_COUNT] = v
            .iter()
            .map(|&a| Point3::from(a))
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|_| HandError::WrongLandmarkCount(v.len()))?;
        Self::new(points)
    }
}

impl From<HandLandmarks> for Vec<[f64; 3]> {
    fn from(h: HandLandmarks) -> Self {
        h.points.iter().map(|&p| p.into()).collect()
    }
}

/// Palm normal and its in-plane angle φ = atan2(n_y, n_x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmFrame {
    pub normal: Point3,
    pub phi: f64,
}

/// Moves the wrist to the origin and scales so that |p₁₇| = 1.
pub fn normalize_hand(lm: &HandLandmarks) -> Result<HandLandmarks, HandError> {
    let origin = lm.point(WRIST);
    let scale = lm.point(LITTLE_MCP).distance(origin);
    if !(scale > 1e-6) {
        return Err(HandError::DegenerateHand);
    }
    let inv = 1.0 / scale;
    Ok(lm.map(|p| (p - origin) * inv))
}

/// n = (p₁₇ − p₀) × (p₅ − p₁₇), normalized.
pub fn palm_normal(lm: &HandLandmarks) -> Result<PalmFrame, HandError> {
    let p0 = lm.point(WRIST);
    let p5 = lm.point(INDEX_MCP);
    let p17 = lm.point(LITTLE_MCP);
    let c = (p17 - p0).cross(p5 - p17);
    let norm = c.norm();
    if norm < 1e-9 {
        return Err(HandError::DegeneratePalm);
    }
    let normal = c * (1.0 / norm);
    Ok(PalmFrame { normal, phi: normal.y.atan2(normal.x) })
}

/// Roll-only end-effector orientation from the palm angle.
pub fn roll_quaternion(frame: &PalmFrame) -> RollQuaternion {
    RollQuaternion::from_palm_angle(frame.phi)
}

/// Counts raised fingers on wrist-normalized distances.
///
/// A long finger is raised when its tip is farther from the wrist than its
/// PIP joint by [`FINGER_EXTENSION_MARGIN`]. The thumb folds sideways, so it
/// is measured by tip-versus-IP distance from the little-finger MCP instead.
pub fn count_fingers(lm: &HandLandmarks) -> Result<u8, HandError> {
    let n = normalize_hand(lm)?;
    let wrist = n.point(WRIST);
    let long = FINGER_PIP_TIP
        .iter()
        .filter(|&&(pip, tip)| n.point(tip).distance(wrist) - n.point(pip).distance(wrist) > FINGER_EXTENSION_MARGIN)
        .count();
    let little = n.point(LITTLE_MCP);
    let thumb = n.point(THUMB_TIP).distance(little) - n.point(THUMB_IP).distance(little) > FINGER_EXTENSION_MARGIN;
    Ok(long as u8 + thumb as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureLabel {
    OpenPalm,
    ClosedFist,
    Neutral,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 3] = [GestureLabel::OpenPalm, GestureLabel::ClosedFist, GestureLabel::Neutral];

    pub fn from_finger_count(count: u8) -> Self {
        match count {
            0 => GestureLabel::ClosedFist,
            4.. => GestureLabel::OpenPalm,
            _ => GestureLabel::Neutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSignal {
    pub label: GestureLabel,
    pub finger_count: u8,
    pub stable: bool,
}

impl GestureSignal {
    pub const NONE: GestureSignal = GestureSignal { label: GestureLabel::Neutral, finger_count: 0, stable: false };

    pub fn is_stable(&self, label: GestureLabel) -> bool {
        self.stable && self.label == label
    }
}

/// Raw per-frame labels plus a debounce over the last N of them.
#[derive(Debug, Clone)]
pub struct GestureClassifier {
    history: VecDeque<GestureLabel>,
    window: usize,
}

impl Default for GestureClassifier {
    fn default() -> Self {
        Self::new(DEBOUNCE_FRAMES)
    }
}

impl GestureClassifier {
    pub fn new(window: usize) -> Self {
        Self { history: VecDeque::with_capacity(window), window: window.max(1) }
    }

    pub fn classify(&mut self, lm: &HandLandmarks) -> Result<GestureSignal, HandError> {
        let finger_count = count_fingers(lm)?;
        Ok(self.push(finger_count))
    }

    /// Feeds an already computed finger count through the debounce.
    pub fn push(&mut self, finger_count: u8) -> GestureSignal {
        let label = GestureLabel::from_finger_count(finger_count);
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(label);
        let stable = self.history.len() == self.window && self.history.iter().all(|&l| l == label);
        GestureSignal { label, finger_count, stable }
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }
}

/// Freezes the last pre-grasp orientation for a short time once a fist is stable.
#[derive(Debug, Clone)]
pub struct OrientationHold {
    hold_ms: u64,
    pre_grasp: Option<RollQuaternion>,
    fist_since: Option<u64>,
}

impl Default for OrientationHold {
    fn default() -> Self {
        Self::new(GRASP_ORIENTATION_HOLD_MS)
    }
}

impl OrientationHold {
    pub fn new(hold_ms: u64) -> Self {
        Self { hold_ms, pre_grasp: None, fist_since: None }
    }

    pub fn update(&mut self, raw: RollQuaternion, signal: &GestureSignal, t_ms: u64) -> RollQuaternion {
        if signal.is_stable(GestureLabel::ClosedFist) {
            let since = *self.fist_since.get_or_insert(t_ms);
            if t_ms.saturating_sub(since) < self.hold_ms {
                return self.pre_grasp.unwrap_or(raw);
            }
            return raw;
        }
        self.fist_since = None;
        if signal.label != GestureLabel::ClosedFist {
            self.pre_grasp = Some(raw);
        }
        raw
    }

    pub fn is_holding(&self, t_ms: u64) -> bool {
        self.fist_since.is_some_and(|s| t_ms.saturating_sub(s) < self.hold_ms)
    }
}

pub mod synthetic {
    //! Geometric construction of synthetic hands for fixtures and tests.

    use super::*;

    /// Which digits are extended, thumb first.
    pub type RaisedFingers = [bool; 5];

    pub const OPEN: RaisedFingers = [true; 5];
    pub const FIST: RaisedFingers = [false; 5];
    pub const INDEX_ONLY: RaisedFingers = [false, true, false, false, false];
    pub const TWO_FINGERS: RaisedFingers = [false, true, true, false, false];
    pub const THREE_FINGERS: RaisedFingers = [false, true, true, true, false];

    /// Raised-finger pattern commonly used for a given count.
    pub fn fingers_for_count(count: u8) -> RaisedFingers {
        match count {
            0 => FIST,
            1 => INDEX_ONLY,
            2 => TWO_FINGERS,
            3 => THREE_FINGERS,
            4 => [false, true, true, true, true],
            _ => OPEN,
        }
    }

    /// A hand posed so that its palm normal is `(cos φ, sin φ, 0)`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct SyntheticHand {
        pub raised: RaisedFingers,
        pub palm_angle: f64,
        /// Wrist-to-little-MCP distance in output units before any offset.
        pub scale: f64,
        pub wrist: Point3,
    }

    impl SyntheticHand {
        pub fn new(raised: RaisedFingers, palm_angle: f64) -> Self {
            Self { raised, palm_angle, scale: 0.08, wrist: Point3::ORIGIN }
        }

        /// Builds landmarks in a palm-local (lateral, along-finger, normal)
        /// layout and embeds them so the palm normal is at `palm_angle`.
        pub fn landmarks(&self) -> HandLandmarks {
            let (s, c) = self.palm_angle.sin_cos();
            let normal = Point3::new(c, s, 0.0);
            let along = Point3::new(-s, c, 0.0);
            let lateral = Point3::new(0.0, 0.0, 1.0);
            // with the little MCP on the −lateral side, (p17−p0)×(p5−p17) points along −(lateral×along) = +normal
            let lateral = if lateral.cross(along).dot(normal) > 0.0 { -lateral } else { lateral };

            let local = local_layout(&self.raised);
            let k = self.scale / LOCAL_LITTLE_MCP_DIST;
            let pts = local.map(|(a, b, n)| self.wrist + (lateral * a + along * b + normal * n) * k);
            HandLandmarks::new(pts).expect("synthetic landmarks are finite")
        }
    }

    const LOCAL_LITTLE_MCP: (f64, f64) = (-0.35, 0.85);
    // |(−0.35, 0.85)|
    const LOCAL_LITTLE_MCP_DIST: f64 = 0.919_238_815_542_511_7;

    fn local_layout(raised: &RaisedFingers) -> [(f64, f64, f64); LANDMARK_COUNT] {
        let mut p = [(0.0, 0.0, 0.0); LANDMARK_COUNT];
        p[1] = (0.25, 0.2, 0.0);
        p[2] = (0.45, 0.35, 0.0);
        if raised[0] {
            p[3] = (0.7, 0.45, 0.0);
            p[4] = (1.2, 0.55, 0.0);
        } else {
            p[3] = (0.45, 0.5, -0.05);
            p[4] = (0.1, 0.6, -0.15);
        }
        let mcps = [(0.4, 0.95), (0.12, 1.0), (-0.12, 0.95), LOCAL_LITTLE_MCP];
        for (f, &(a, b)) in mcps.iter().enumerate() {
            let base = 5 + 4 * f;
            p[base] = (a, b, 0.0);
            if raised[f + 1] {
                p[base + 1] = (a, b + 0.35, 0.0);
                p[base + 2] = (a, b + 0.6, 0.0);
                p[base + 3] = (a, b + 0.8, 0.0);
            } else {
                p[base + 1] = (a, b + 0.3, -0.05);
                p[base + 2] = (a, b + 0.25, -0.2);
                p[base + 3] = (a, b + 0.05, -0.15);
            }
        }
        p
    }
}
