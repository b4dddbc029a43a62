//! The control state machine on its own: select manual mode with one finger,
//! stream poses at 5 Hz, close the gripper with a fist.

use teleop_core::control::{CommandKind, Controller, TargetPose, COMMAND_PERIOD_MS};
use teleop_core::geometry::{Point3, RollQuaternion};
use teleop_core::handpose::{GestureClassifier, GestureSignal, DEBOUNCE_FRAMES};

fn main() {
    let mut controller = Controller::new();
    let mut gestures = GestureClassifier::new(DEBOUNCE_FRAMES);
    let mut signal = GestureSignal::NONE;
    let mut next_tick = 0;

    // 30 Hz input: one finger for 1.5 s, three fingers for 1 s, then a fist
    for k in 0..120u64 {
        let t = k * 1000 / 30;
        let fingers = match t {
            0..=1499 => 1,
            1500..=2499 => 3,
            _ => 0,
        };
        signal = gestures.push(fingers);
        let mode = controller.observe_gesture(&signal, t);

        if t >= next_tick {
            next_tick += COMMAND_PERIOD_MS;
            let target = TargetPose {
                position_robot: Point3::new(0.6, 0.1 * (t as f64 / 1000.0).sin(), 0.0),
                orientation: RollQuaternion::IDENTITY,
            };
            match controller.tick(t, Some(target), &signal, || None).map(|c| c.kind) {
                Some(CommandKind::MoveEe { target }) => {
                    println!("{t:5} ms  {mode:?}  move_ee {}", target.position_robot)
                }
                Some(other) => println!("{t:5} ms  {mode:?}  {other:?}"),
                None => {}
            }
        }
    }
    println!("final state {:?}, last gesture {:?}", controller.state(), signal.label);
}
