use teleop_core::geometry::Point3;
use teleop_core::simarm::{select_object, ArmCommand, ArmModel, ArmSimulator, GraspRoutine, Scene, SceneObject};

fn object(id: &str, class: &str, p: [f64; 3], confidence: f64) -> SceneObject {
    SceneObject {
        id: id.into(),
        class_label: class.into(),
        position: Point3::new(p[0], p[1], p[2]),
        confidence,
        graspable: true,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = Scene {
        objects: vec![
            object("cup-1", "cup", [0.62, 0.15, -0.15], 0.92),
            object("can-1", "can", [0.55, -0.25, -0.15], 0.92),
            object("book-1", "book", [0.75, 0.0, -0.15], 0.99),
        ],
        allowed_classes: vec!["cup".into(), "can".into()],
        ..Scene::default()
    };
    let mut sim = ArmSimulator::new(ArmModel::desk_6dof(), scene)?;

    // the book is the most confident detection but not an allowed class;
    // cup and can tie, so the one nearer the gripper wins
    let ee = sim.state().ee_position();
    let target = select_object(&sim.scene().objects, ee, &sim.scene().allowed_classes)?.clone();
    println!("selected {} at {}", target.id, target.position);

    let mut routine = GraspRoutine::start(&sim, &target);
    let mut t = 0.0;
    let mut phase = None;
    while !routine.status().is_terminal() {
        routine.step(&mut sim, 0.01)?;
        t += 0.01;
        let now = routine.status().clone();
        if phase.as_ref() != Some(&now) {
            println!("{t:5.2} s  {now:?}  ee {}", sim.state().ee_position());
            phase = Some(now);
        }
    }
    println!(
        "gripper {:?}, {} now at {}",
        sim.state().gripper,
        target.id,
        sim.scene().object(&target.id).unwrap().position
    );

    sim.step(&ArmCommand::GripperOpen, 0.01)?;
    println!("released: {} rests at {}", target.id, sim.scene().object(&target.id).unwrap().position);
    Ok(())
}
