//! Forward/inverse kinematics, first-order tracking of a moving target, and
//! the collision guard refusing a path through an obstacle.

use teleop_core::control::TargetPose;
use teleop_core::geometry::Point3;
use teleop_core::simarm::{fk, ik, ArmCommand, ArmModel, ArmSimulator, Obstacle, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ArmModel::desk_6dof();
    let home = fk(&model, &[0.0; 6])?;
    println!("home ee {}  reach {} m  tau {} s", home.position, model.reach_m, model.time_constant_s);

    let goal = TargetPose { position_robot: Point3::new(0.5, 0.2, 0.1), orientation: home.orientation };
    let sol = ik(&goal, &[0.0; 6], &model)?;
    println!("ik -> q = {:.3?} ({} iterations, residual {:.1e} m)", sol.q, sol.iterations, sol.position_residual_m);

    let scene = Scene {
        obstacles: vec![Obstacle { center: Point3::new(0.55, -0.2, -0.1), radius_m: 0.05 }],
        ..Scene::default()
    };
    let mut sim = ArmSimulator::new(model, scene)?;
    let orientation = home.orientation;
    for step in 0..=100 {
        let t = step as f64 * 0.01;
        let target = TargetPose { position_robot: Point3::new(0.6, 0.1 * t, -0.1), orientation };
        let state = sim.step(&ArmCommand::MoveEe { target }, 0.01)?;
        if step % 25 == 0 {
            println!(
                "t={t:.2} s  ee {}  lag {:.4} m",
                state.ee_position(),
                state.ee_position().distance(target.position_robot)
            );
        }
    }

    let through = TargetPose { position_robot: Point3::new(0.5, -0.35, -0.1), orientation };
    let safety = sim.step(&ArmCommand::MoveEe { target: through }, 0.01)?.safety;
    println!("move through the obstacle: {safety:?} ({:?})", sim.last_collision());
    Ok(())
}
