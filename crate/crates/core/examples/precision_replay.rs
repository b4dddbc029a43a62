//! Generates the three-speed synthetic session, replays it and prints the
//! precision report. Pass a spec path to use a different trajectory.

use std::path::PathBuf;

use teleop_core::session::{generate_synthetic, replay, SessionRecord, TrajectorySpec};
use teleop_core::simarm::ArmModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/three_speed.toml"));
    let spec = TrajectorySpec::from_toml(&std::fs::read_to_string(&path)?)?;
    let record = generate_synthetic(&spec)?;

    // through the file format and back, as the CLI would
    let text = record.to_jsonl();
    let record = SessionRecord::parse(&text)?;
    println!("{}: {} frames, {} bytes of JSON Lines", path.display(), record.frames.len(), text.len());

    let out = replay(&record)?;
    print!("{}", out.report.summary());
    let tau = ArmModel::desk_6dof().time_constant_s;
    for seg in &out.report.segments {
        if let Some(mean) = seg.mean_error_m {
            println!(
                "  v={:.2} m/s  v*tau={:.4} m  measured {:.4} m",
                seg.nominal_speed_mps,
                seg.nominal_speed_mps * tau,
                mean
            );
        }
    }
    Ok(())
}
