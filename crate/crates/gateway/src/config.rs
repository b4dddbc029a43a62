use std::path::Path;

use serde::{Deserialize, Serialize};

use teleop_core::geometry::{CameraIntrinsics, RigidTransform};
use teleop_core::pipeline::{arm_model_by_id, EngineConfig, DEFAULT_STALE_AFTER_MS};
use teleop_core::simarm::{Scene, DESK_6DOF_ID};
use teleop_core::tracking::FilterConfig;

use crate::GatewayError;

/// Server configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "CameraIntrinsics::vga_default")]
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub marker_from_camera: Option<RigidTransform>,
    pub robot_from_marker: RigidTransform,
    #[serde(default = "default_arm")]
    pub arm_model: String,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default = "default_stale")]
    pub stale_after_ms: u64,
    /// Broadcasts queued per client before the oldest are dropped.
    #[serde(default = "default_buffer")]
    pub broadcast_buffer: usize,
}

fn default_arm() -> String {
    DESK_6DOF_ID.to_string()
}

fn default_stale() -> u64 {
    DEFAULT_STALE_AFTER_MS
}

fn default_buffer() -> usize {
    4
}

impl ServeConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let cfg: ServeConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.engine_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn engine_config(&self) -> Result<EngineConfig, GatewayError> {
        if self.broadcast_buffer == 0 {
            return Err(GatewayError::Config("broadcast_buffer must be at least 1".into()));
        }
        self.filter.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        let arm = arm_model_by_id(&self.arm_model).map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(EngineConfig {
            intrinsics: self.intrinsics,
            filter: self.filter,
            marker_from_camera: self.marker_from_camera,
            robot_from_marker: self.robot_from_marker,
            arm,
            scene: self.scene.clone(),
            stale_after_ms: self.stale_after_ms,
        })
    }
}
