//! Session files: recording, parsing, synthetic generation, replay and the
//! precision metrics computed from a replay.
//!
//! A session is JSON Lines. The first line is the header; every later line is
//! either a landmark frame or a ground-truth sample, each tagged by `type`.

mod metrics;
mod replay;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    compute_metrics, pearson, ErrorSummary, MetricSample, PrecisionReport, SegmentReport, TimedPoint,
    MIN_ALIGNED_PAIRS, PAIRING_WINDOW_MS, SETTLING_WINDOW_MS, SPEED_HALF_WINDOW_MS,
};
pub use replay::{replay, ReplayOutput};
pub use synth::{
    default_robot_from_marker, frame_time_ms, generate_synthetic, GestureStep, NoiseSpec, SegmentSpec, Teleport,
    TrajectorySpec, FRAME_RATE_HZ,
};

use crate::frame::LandmarkFrame;
use crate::geometry::{CameraIntrinsics, Point3, RigidTransform};
use crate::pipeline::EngineError;
use crate::simarm::Scene;
use crate::tracking::FilterConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unsupported session schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("line 1: missing or malformed session header: {0}")]
    MissingHeader(String),
    #[error("line {line}: {reason}")]
    CorruptFrame { line: usize, reason: String },
    #[error("infeasible trajectory spec: {parameter}: {reason}")]
    InfeasibleSpec { parameter: String, reason: String },
    #[error("only {pairs} aligned samples; at least {MIN_ALIGNED_PAIRS} are needed")]
    InsufficientData { pairs: usize },
    #[error("replay failed at {t_ms} ms: {source}")]
    Replay { t_ms: u64, source: EngineError },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// A constant-speed stretch of the reference trajectory, recorded so the
/// report can break errors down per speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub start_ms: u64,
    pub end_ms: u64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema_version: u32,
    pub intrinsics: CameraIntrinsics,
    pub filter: FilterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_from_camera: Option<RigidTransform>,
    pub robot_from_marker: RigidTransform,
    pub arm_model: String,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentInfo>,
}

/// Ground-truth wrist position in the robot frame (the motion-capture role).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t_ms: u64,
    pub wrist_robot: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub frames: Vec<LandmarkFrame>,
    pub ground_truth: Vec<TruthSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
enum Line {
    Header(SessionHeader),
    Frame(LandmarkFrame),
    Truth(TruthSample),
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
enum LineRef<'a> {
    Header(&'a SessionHeader),
    Frame(&'a LandmarkFrame),
    Truth(&'a TruthSample),
}

impl SessionRecord {
    pub fn truth_by_time(&self) -> BTreeMap<u64, Point3> {
        self.ground_truth.iter().map(|s| (s.t_ms, s.wrist_robot)).collect()
    }

    /// Serializes to JSON Lines, interleaving truth samples after the frame
    /// with the same timestamp.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LineRef| {
            out.push_str(&serde_json::to_string(&line).expect("session lines serialize"));
            out.push('\n');
        };
        push(LineRef::Header(&self.header));
        let mut truth = self.ground_truth.iter().peekable();
        for frame in &self.frames {
            while let Some(s) = truth.next_if(|s| s.t_ms < frame.t_ms) {
                push(LineRef::Truth(s));
            }
            push(LineRef::Frame(frame));
            while let Some(s) = truth.next_if(|s| s.t_ms == frame.t_ms) {
                push(LineRef::Truth(s));
            }
        }
        for s in truth {
            push(LineRef::Truth(s));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| SessionError::MissingHeader("empty file".into()))?;
        let header = parse_header(first)?;

        let mut frames: Vec<LandmarkFrame> = Vec::new();
        let mut ground_truth: Vec<TruthSample> = Vec::new();
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| SessionError::CorruptFrame { line, reason };
            match serde_json::from_str::<Line>(text).map_err(|e| corrupt(e.to_string()))? {
                Line::Header(_) => return Err(corrupt("second header".into())),
                Line::Frame(frame) => {
                    if let Some(prev) = frames.last() {
                        if frame.t_ms <= prev.t_ms {
                            return Err(corrupt(format!("t_ms {} is not after {}", frame.t_ms, prev.t_ms)));
                        }
                    }
                    frame.validate().map_err(corrupt)?;
                    frames.push(frame);
                }
                Line::Truth(s) => {
                    if ground_truth.last().is_some_and(|p| s.t_ms < p.t_ms) {
                        return Err(corrupt(format!("truth t_ms {} goes backwards", s.t_ms)));
                    }
                    ground_truth.push(s);
                }
            }
        }
        Ok(Self { header, frames, ground_truth })
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SessionError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        std::fs::write(path, self.to_jsonl())
            .map_err(|source| SessionError::Io { path: path.display().to_string(), source })
    }
}

fn parse_header(text: &str) -> Result<SessionHeader, SessionError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SessionError::MissingHeader(e.to_string()))?;
    if value.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Err(SessionError::MissingHeader("first line is not a header".into()));
    }
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SessionError::MissingHeader("schema_version missing".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(SessionError::SchemaVersion { found });
    }
    match serde_json::from_str::<Line>(text) {
        Ok(Line::Header(h)) => Ok(h),
        Ok(_) => unreachable!("type checked above"),
        Err(e) => Err(SessionError::MissingHeader(e.to_string())),
    }
}
