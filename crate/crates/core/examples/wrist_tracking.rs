//! Pixel + depth → camera frame → marker frame, through the jump-rejecting
//! EMA filter. A 0.4 m glitch in the middle of the stream is discarded.

use nalgebra::Vector3;
use teleop_core::frame::{LandmarkFrame, WristObservation};
use teleop_core::geometry::{back_project, CameraIntrinsics, PixelDepthPoint};
use teleop_core::session::default_robot_from_marker;
use teleop_core::tracking::{CalibrationState, FilterConfig, WristTracker};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = CameraIntrinsics::vga_default();
    let p = back_project(PixelDepthPoint { u: 400.0, v: 200.0, depth_mm: 1500 }, &k)?;
    println!("pixel (400, 200) at 1500 mm -> camera {p}");

    // marker lying 1.6 m straight ahead of the camera
    let mut calib = CalibrationState::unlocked(default_robot_from_marker());
    calib.calibrate_once(&nalgebra::Matrix3::identity(), &Vector3::new(0.0, 0.0, 1.6))?;

    let mut tracker = WristTracker::new(k, FilterConfig::default())?;
    for i in 0..12u64 {
        let u = 320.0 + 3.0 * i as f64;
        // frame 6 reports a spurious near-range depth
        let depth_mm = if i == 6 { 1100 } else { 1500 };
        let frame = LandmarkFrame {
            t_ms: i * 33,
            wrist: Some(WristObservation { u, v: 240.0, depth_mm, depth_window: vec![depth_mm; 25] }),
            hand: None,
            marker: None,
        };
        let w = tracker.track(&frame, &calib)?;
        let robot = calib.robot_from_marker().apply(w.position_marker);
        println!(
            "t={:4} ms  {:?}  marker {}  robot {}  speed {:.3} m/s",
            frame.t_ms,
            tracker.last_outcome().unwrap(),
            w.position_marker,
            robot,
            w.velocity_mps
        );
    }
    Ok(())
}
