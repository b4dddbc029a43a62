use super::*;
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Homogeneous-matrix forward kinematics built directly from Rodrigues'
/// formula, sharing no code with the model's chain evaluation.
fn oracle_fk(model: &ArmModel, q: &JointVector) -> (Point3, f64) {
    fn rodrigues(axis: [f64; 3], angle: f64) -> Matrix4<f64> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Matrix4::new(
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            0.0,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            0.0,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
    fn translation(v: [f64; 3]) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 3)] = v[0];
        m[(1, 3)] = v[1];
        m[(2, 3)] = v[2];
        m
    }
    let mut t = Matrix4::identity();
    for (j, qi) in model.joints.iter().zip(q) {
        let [r, p, y] = j.origin_rpy;
        t = t
            * translation(j.origin_xyz)
            * rodrigues([0.0, 0.0, 1.0], y)
            * rodrigues([0.0, 1.0, 0.0], p)
            * rodrigues([1.0, 0.0, 0.0], r)
            * rodrigues(j.axis, *qi);
    }
    t *= translation(model.tool_offset);
    let p = t * Vector4::new(0.0, 0.0, 0.0, 1.0);
    (Point3::new(p.x, p.y, p.z), t[(2, 1)].atan2(t[(2, 2)]))
}

fn random_q(model: &ArmModel, rng: &mut impl Rng, shrink: f64) -> JointVector {
    let mut q = [0.0; JOINT_COUNT];
    for (i, qi) in q.iter_mut().enumerate() {
        let (lo, hi) = model.limits(i);
        let mid = 0.5 * (lo + hi);
        *qi = mid + shrink * rng.gen_range(lo - mid..hi - mid);
    }
    q
}

#[test]
fn fk_zero_matches_home_and_oracle() {
    let model = ArmModel::desk_6dof();
    let pose = fk(&model, &[0.0; 6]).unwrap();
    let (p, roll) = oracle_fk(&model, &[0.0; 6]);
    assert!(pose.position.distance(p) < 1e-12);
    assert!(pose.position.distance(DESK_6DOF_HOME) < 1e-12, "{:?}", pose.position);
    assert!(wrap_angle(pose.orientation.x_rotation() - roll).abs() < 1e-9);
}

#[test]
fn fk_matches_oracle_on_random_configurations() {
    let model = ArmModel::desk_6dof();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let q = random_q(&model, &mut rng, 1.0);
        let pose = fk(&model, &q).unwrap();
        let (p, _) = oracle_fk(&model, &q);
        assert!(pose.position.distance(p) < 1e-12);
    }
}

#[test]
fn base_yaw_rotates_home_about_z() {
    let model = ArmModel::desk_6dof();
    let mut q = [0.0; 6];
    q[0] = std::f64::consts::FRAC_PI_2;
    let p = fk(&model, &q).unwrap().position;
    let expected = Point3::new(-DESK_6DOF_HOME.y, DESK_6DOF_HOME.x, DESK_6DOF_HOME.z);
    assert!(p.distance(expected) < 1e-12, "{p:?}");
}

#[test]
fn fk_rejects_limit_violation() {
    let model = ArmModel::desk_6dof();
    let mut q = [0.0; 6];
    q[1] = 3.0;
    assert!(matches!(fk(&model, &q), Err(SimError::JointLimit { joint: 1, .. })));
}

#[test]
fn ik_fixed_point_at_home() {
    let model = ArmModel::desk_6dof();
    let pose = fk(&model, &[0.0; 6]).unwrap();
    let target = TargetPose { position_robot: pose.position, orientation: pose.orientation };
    let sol = ik(&target, &[0.0; 6], &model).unwrap();
    assert!(sol.q.iter().all(|v| v.abs() < 1e-6), "{:?}", sol.q);
}

#[test]
fn ik_round_trip_from_nearby_seed() {
    let model = ArmModel::desk_6dof();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut converged = 0;
    let n = 300;
    for _ in 0..n {
        let q = random_q(&model, &mut rng, 0.6);
        let pose = fk(&model, &q).unwrap();
        let mut seed = q;
        for s in seed.iter_mut() {
            *s += rng.gen_range(-0.2..0.2);
        }
        model.clamp_to_limits(&mut seed);
        let target = TargetPose { position_robot: pose.position, orientation: pose.orientation };
        if let Ok(sol) = ik(&target, &seed, &model) {
            let back = fk(&model, &sol.q).unwrap();
            assert!(back.position.distance(pose.position) <= 1e-4);
            converged += 1;
        }
    }
    assert!(converged as f64 >= 0.99 * n as f64, "{converged}/{n}");
}

#[test]
fn ik_out_of_reach_reports_best_iterate() {
    let model = ArmModel::desk_6dof();
    let target = TargetPose { position_robot: Point3::new(2.0, 0.0, 0.0), orientation: RollQuaternion::IDENTITY };
    match ik(&target, &[0.0; 6], &model) {
        Err(SimError::NoConvergence { best }) => {
            assert!(best.position_residual_m > 0.9);
            model.check_limits(&best.q).unwrap();
        }
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}

#[test]
fn step_follows_first_order_response() {
    let model = ArmModel::desk_6dof();
    let mut sim = ArmSimulator::new(model.clone(), Scene::default()).unwrap();
    let start = sim.state().ee_position();
    let goal = start + Point3::new(0.0, 0.05, 0.02);
    let target = TargetPose { position_robot: goal, orientation: sim.state().ee_pose().orientation };
    let dt = 0.01;
    for _ in 0..35 {
        sim.step(&ArmCommand::MoveEe { target }, dt).unwrap();
    }
    // after one time constant the remaining error is e^-1 of the initial step
    let remaining = sim.state().ee_position().distance(goal) / start.distance(goal);
    assert!((remaining - (-1.0f64).exp()).abs() < 0.01, "{remaining}");
}

#[test]
fn steady_state_lag_is_speed_times_tau() {
    let model = ArmModel::desk_6dof();
    let tau = model.time_constant_s;
    let mut sim = ArmSimulator::new(model, Scene::default()).unwrap();
    let orientation = sim.state().ee_pose().orientation;
    let v = 0.05;
    let dt = 0.01;
    let start = Point3::new(0.55, -0.3, 0.1);
    let dir = Point3::new(0.0, 1.0, 0.0);
    for _ in 0..300 {
        sim.step(&ArmCommand::MoveEe { target: TargetPose { position_robot: start, orientation } }, dt).unwrap();
    }
    let mut lag = 0.0;
    for k in 1..=1000 {
        let reference = start + dir * (v * k as f64 * dt);
        sim.step(&ArmCommand::MoveEe { target: TargetPose { position_robot: reference, orientation } }, dt).unwrap();
        lag = reference.distance(sim.state().ee_position());
    }
    // discrete first-order lag: v*dt / (1 - e^(-dt/tau)) - v*dt
    let k = 1.0 - (-dt / tau).exp();
    let discrete = v * dt / k - v * dt;
    assert!((lag - discrete).abs() < 1e-3, "{lag} vs {discrete}");
    assert!((lag - v * tau).abs() / (v * tau) < 0.05);
}

#[test]
fn targets_are_clamped_to_workspace_and_reach() {
    let sim = ArmSimulator::new(ArmModel::desk_6dof(), Scene::default()).unwrap();
    let (p, clamped) = sim.clamp_target(Point3::new(3.0, 0.0, 0.2));
    assert!(clamped);
    assert!(p.norm() <= sim.model().usable_reach() + 1e-12);
    assert!(sim.model().workspace.contains(p));
    let inside = Point3::new(0.5, 0.1, 0.1);
    assert_eq!(sim.clamp_target(inside), (inside, false));
}

#[test]
fn move_through_obstacle_is_blocked() {
    let model = ArmModel::desk_6dof();
    let home = fk(&model, &[0.0; 6]).unwrap();
    let obstacle = Obstacle { center: home.position + Point3::new(0.0, 0.15, 0.0), radius_m: 0.04 };
    let scene = Scene { obstacles: vec![obstacle], ..Scene::default() };
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    let q_before = *sim.state().q();
    let target =
        TargetPose { position_robot: home.position + Point3::new(0.0, 0.3, 0.0), orientation: home.orientation };
    let state = sim.step(&ArmCommand::MoveEe { target }, 0.05).unwrap();
    assert_eq!(state.safety, SafetyStatus::Blocked);
    assert_eq!(*state.q(), q_before);
    assert_eq!(sim.last_collision(), Some(&Collision::PathThroughObstacle(0)));
}

#[test]
fn inflation_counts_toward_path_clearance() {
    let model = ArmModel::desk_6dof();
    let home = fk(&model, &[0.0; 6]).unwrap();
    // the path passes 4.5 cm from the center of a 3 cm obstacle: clear of the
    // raw sphere but inside the inflated one
    let obstacle = Obstacle { center: home.position + Point3::new(0.0, 0.1, 0.045), radius_m: 0.03 };
    let scene = Scene { obstacles: vec![obstacle], ..Scene::default() };
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    let target =
        TargetPose { position_robot: home.position + Point3::new(0.0, 0.2, 0.0), orientation: home.orientation };
    assert_eq!(sim.step(&ArmCommand::MoveEe { target }, 0.05).unwrap().safety, SafetyStatus::Blocked);
}

#[test]
fn link_collision_detected() {
    let model = ArmModel::desk_6dof();
    let chain = model.chain(&[0.0; 6]);
    let elbow = chain.point(ChainPoint::Joint(2));
    let obstacle = Obstacle { center: Point3::from_vector(&elbow), radius_m: 0.02 };
    assert!(matches!(check_configuration(&model, &[0.0; 6], &[obstacle]), Err(Collision::LinkObstacle { .. })));
    assert_eq!(check_configuration(&model, &[0.0; 6], &[]), Ok(()));
}

fn obj(id: &str, class: &str, p: [f64; 3], confidence: f64) -> SceneObject {
    SceneObject {
        id: id.into(),
        class_label: class.into(),
        position: Point3::new(p[0], p[1], p[2]),
        confidence,
        graspable: true,
    }
}

#[test]
fn select_object_examples() {
    let allowed = vec!["cup".to_string(), "can".to_string()];
    let ee = Point3::new(0.5, 0.0, 0.0);
    let objects = vec![
        obj("a", "cup", [0.5, 0.3, 0.0], 0.90),
        obj("b", "can", [0.5, 0.1, 0.0], 0.90 - 5e-7),
        obj("c", "cup", [0.5, 0.05, 0.0], 0.80),
        obj("d", "book", [0.5, 0.0, 0.0], 0.99),
    ];
    // a and b tie within 1e-6; b is closer
    assert_eq!(select_object(&objects, ee, &allowed).unwrap().id, "b");
    let mut far = objects.clone();
    far[1].confidence = 0.85;
    assert_eq!(select_object(&far, ee, &allowed).unwrap().id, "a");
    assert_eq!(select_object(&objects, ee, &[]).unwrap_err(), SimError::NoTarget);
}

/// Sort-based reference selection.
fn oracle_select(objects: &[SceneObject], ee: Point3, allowed: &[String]) -> Option<String> {
    let mut eligible: Vec<&SceneObject> =
        objects.iter().filter(|o| o.graspable && allowed.contains(&o.class_label)).collect();
    eligible.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    let best = eligible.first()?.confidence;
    eligible
        .iter()
        .filter(|o| best - o.confidence < 1e-6)
        .map(|o| (o.position.distance(ee), o.id.clone()))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|(_, id)| id)
}

proptest! {
    #[test]
    fn select_object_matches_oracle(
        raw in prop::collection::vec((0usize..3, -0.5f64..0.5, -0.5f64..0.5, 0u8..4, any::<bool>()), 0..12)
    ) {
        let classes = ["cup", "can", "book"];
        let allowed = vec!["cup".to_string(), "can".to_string()];
        let objects: Vec<SceneObject> = raw
            .iter()
            .enumerate()
            .map(|(i, (c, x, y, conf, g))| SceneObject {
                id: format!("o{i}"),
                class_label: classes[*c].into(),
                position: Point3::new(0.5 + x, *y, 0.0),
                confidence: 0.6 + 0.1 * *conf as f64,
                graspable: *g,
            })
            .collect();
        let ee = Point3::new(0.5, 0.0, 0.1);
        let got = select_object(&objects, ee, &allowed).ok().map(|o| o.id.clone());
        prop_assert_eq!(got, oracle_select(&objects, ee, &allowed));
    }

    #[test]
    fn ik_solutions_respect_limits(x in 0.35f64..0.75, y in -0.4f64..0.4, z in -0.1f64..0.3) {
        let model = ArmModel::desk_6dof();
        let target = TargetPose { position_robot: Point3::new(x, y, z), orientation: RollQuaternion::IDENTITY };
        let q = match ik(&target, &[0.0; 6], &model) {
            Ok(sol) => sol.q,
            Err(SimError::NoConvergence { best }) => best.q,
            Err(e) => panic!("{e}"),
        };
        prop_assert!(model.check_limits(&q).is_ok());
    }
}

fn table_scene(model: &ArmModel) -> (Scene, Point3) {
    let home = fk(model, &[0.0; 6]).unwrap().position;
    let object = Point3::new(home.x - 0.05, 0.12, home.z - 0.05);
    let scene = Scene {
        objects: vec![obj("cup-1", "cup", [object.x, object.y, object.z], 0.9)],
        allowed_classes: vec!["cup".into()],
        ..Scene::default()
    };
    (scene, object)
}

#[test]
fn grasp_routine_picks_and_lifts() {
    let model = ArmModel::desk_6dof();
    let (scene, object) = table_scene(&model);
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    let target =
        select_object(&sim.scene().objects, sim.state().ee_position(), &sim.scene().allowed_classes).unwrap().clone();
    let mut routine = GraspRoutine::start(&sim, &target);
    let (states, status) = routine.run_to_end(&mut sim, 0.02, 5000).unwrap();
    assert_eq!(status, RoutineStatus::Succeeded);
    let last = states.last().unwrap();
    assert_eq!(last.held_object(), Some("cup-1"));
    let lifted = sim.scene().object("cup-1").unwrap().position;
    assert!((lifted.z - (object.z + GRASP_CLEARANCE_M)).abs() <= WAYPOINT_TOLERANCE_M + 1e-9);

    // releasing drops it back to its rest height
    sim.step(&ArmCommand::GripperOpen, 0.02).unwrap();
    assert_eq!(sim.scene().object("cup-1").unwrap().position.z, object.z);
}

#[test]
fn grasp_routine_blocked_by_obstacle() {
    let model = ArmModel::desk_6dof();
    let (mut scene, object) = table_scene(&model);
    scene.obstacles.push(Obstacle { center: object + Point3::new(0.0, 0.0, 0.06), radius_m: 0.02 });
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    let o = sim.scene().object("cup-1").unwrap().clone();
    let mut routine = GraspRoutine::start(&sim, &o);
    let (_, status) = routine.run_to_end(&mut sim, 0.02, 5000).unwrap();
    assert!(matches!(status, RoutineStatus::Failed(GraspFailure::Blocked(_))), "{status:?}");
    assert_eq!(sim.state().held_object(), None);
}

#[test]
fn grasp_routine_abort_opens_and_holds() {
    let model = ArmModel::desk_6dof();
    let (scene, _) = table_scene(&model);
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    let o = sim.scene().object("cup-1").unwrap().clone();
    let mut routine = GraspRoutine::start(&sim, &o);
    for _ in 0..10 {
        routine.step(&mut sim, 0.02).unwrap();
    }
    assert_eq!(routine.abort(&mut sim, 0.02).unwrap(), RoutineStatus::Aborted);
    assert_eq!(sim.state().gripper, GripperState::Open);
    let q = *sim.state().q();
    sim.step(&ArmCommand::Hold, 0.02).unwrap();
    assert_eq!(*sim.state().q(), q);
    // terminal routines ignore further steps
    assert_eq!(routine.step(&mut sim, 0.02).unwrap(), RoutineStatus::Aborted);
}

#[test]
fn closing_away_from_objects_captures_nothing() {
    let model = ArmModel::desk_6dof();
    let (scene, _) = table_scene(&model);
    let mut sim = ArmSimulator::new(model, scene).unwrap();
    sim.step(&ArmCommand::GripperClose, 0.02).unwrap();
    assert_eq!(sim.state().gripper, GripperState::Closed);
}

#[test]
fn gripper_state_serde() {
    let held = GripperState::Holding("cup-1".into());
    let json = serde_json::to_string(&held).unwrap();
    assert_eq!(serde_json::from_str::<GripperState>(&json).unwrap(), held);
    let r = Matrix3::identity();
    assert_eq!(tool_roll(&r), 0.0);
}

#[test]
fn invalid_dt_rejected() {
    let mut sim = ArmSimulator::new(ArmModel::desk_6dof(), Scene::default()).unwrap();
    assert_eq!(sim.step(&ArmCommand::Hold, 0.0).unwrap_err(), SimError::InvalidDt(0.0));
    assert!(sim.step(&ArmCommand::Hold, 0.6).is_err());
}
