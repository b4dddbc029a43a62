//! The per-observation input record shared by live streaming and session files.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{matrix_from_rows, PixelDepthPoint};
use crate::handpose::HandLandmarks;

/// Wrist pixel, its center depth and the surrounding depth window (row-major,
/// `depth_window × depth_window` values; may be empty when only the center
/// reading is available).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristObservation {
    pub u: f64,
    pub v: f64,
    pub depth_mm: u16,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depth_window: Vec<u16>,
}

impl WristObservation {
    pub fn pixel(&self) -> PixelDepthPoint {
        PixelDepthPoint { u: self.u, v: self.v, depth_mm: self.depth_mm }
    }
}

/// Fiducial marker pose as reported by the detector: camera-to-marker rotation
/// and translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl MarkerDetection {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        matrix_from_rows(&self.rotation)
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrist: Option<WristObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandLandmarks>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<MarkerDetection>,
}

impl LandmarkFrame {
    pub fn is_empty(&self) -> bool {
        self.wrist.is_none() && self.hand.is_none() && self.marker.is_none()
    }

    /// Checks the per-frame invariants that do not depend on stream history.
    pub fn validate(&self) -> Result<(), String> {
        if self.is_empty() {
            return Err("frame carries none of wrist, hand or marker".into());
        }
        if let Some(w) = &self.wrist {
            if !(w.u.is_finite() && w.v.is_finite()) {
                return Err("wrist pixel is not finite".into());
            }
        }
        if let Some(m) = &self.marker {
            if m.rotation.iter().flatten().chain(m.translation.iter()).any(|v| !v.is_finite()) {
                return Err("marker pose is not finite".into());
            }
        }
        Ok(())
    }
}
