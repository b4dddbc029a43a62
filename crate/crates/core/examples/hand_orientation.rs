//! Palm normal, roll quaternion, finger counting and gesture debouncing on
//! synthetic hands.

use teleop_core::handpose::synthetic::{fingers_for_count, SyntheticHand};
use teleop_core::handpose::{count_fingers, palm_normal, roll_quaternion, GestureClassifier, DEBOUNCE_FRAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for deg in [0.0f64, 45.0, 90.0, -120.0] {
        let hand = SyntheticHand::new(fingers_for_count(5), deg.to_radians()).landmarks();
        let frame = palm_normal(&hand)?;
        let q = roll_quaternion(&frame);
        println!(
            "palm at {deg:>6.1}°: normal {}  q = {:.5?}  roll about x = {:.1}°",
            frame.normal,
            q.components(),
            q.x_rotation().to_degrees()
        );
    }

    let mut classifier = GestureClassifier::new(DEBOUNCE_FRAMES);
    // three frames of one finger, then a fist that has to survive the debounce window
    let script = [1, 1, 1, 0, 0, 0, 0, 0, 0];
    for (i, count) in script.into_iter().enumerate() {
        let hand = SyntheticHand::new(fingers_for_count(count), 0.3).landmarks();
        let counted = count_fingers(&hand)?;
        let signal = classifier.classify(&hand)?;
        println!("frame {i}: counted {counted} -> {:?} stable={}", signal.label, signal.stable);
    }
    Ok(())
}
