use clutter_core::physics::{
    check_stability, settle, BodyId, BodyState, RigidBody, SettleOptions, Shape, StabilityThresholds, World,
};
use glam::{DQuat, DVec3};

const TOP: f64 = 0.70;

fn table_world() -> World {
    let mut world = World::default();
    world.add_body(
        RigidBody::new_static(
            Shape::cuboid(0.30, 0.35, 0.35),
            0.6,
            DVec3::new(0.0, 0.0, 0.35),
            DQuat::IDENTITY,
        )
        .unwrap(),
    );
    world
}

fn drop_body(world: &mut World, shape: Shape, xy: (f64, f64), gap: f64, yaw: f64) -> BodyId {
    let z = TOP + shape.bottom_offset() + gap;
    world.add_body(
        RigidBody::new(
            shape,
            0.4,
            0.6,
            0.0,
            BodyState::at_rest(DVec3::new(xy.0, xy.1, z), DQuat::from_rotation_z(yaw)),
        )
        .unwrap(),
    )
}

#[test]
fn resting_cuboid_settles_quickly() {
    let mut world = table_world();
    let id = drop_body(&mut world, Shape::cuboid(0.04, 0.03, 0.05), (0.05, -0.02), 0.0, 0.4);
    let th = StabilityThresholds::default();
    let traj = settle(&mut world, id, &SettleOptions::full(240), &th).unwrap();
    let report = check_stability(&traj, &th);
    assert!(report.stable, "{report:?}");
    assert!(traj.samples.len() == 240);
    let tail_max = traj.samples[40..]
        .iter()
        .map(|s| s.linear_velocity().length())
        .fold(0.0, f64::max);
    assert!(tail_max < 0.005, "tail speed {tail_max}");
    for s in &traj.samples {
        assert!((s.orientation().length() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn resting_shapes_with_drop_gap_are_stable() {
    let th = StabilityThresholds::default();
    let shapes = [
        Shape::cuboid(0.02, 0.02, 0.02),
        Shape::cuboid(0.12, 0.05, 0.02),
        Shape::cuboid(0.03, 0.03, 0.12),
        Shape::cylinder(0.04, 0.06),
        Shape::cylinder(0.02, 0.12),
        Shape::sphere(0.05),
    ];
    for shape in shapes {
        let mut world = table_world();
        let id = drop_body(&mut world, shape, (0.0, 0.0), 0.002, 0.7);
        let traj = settle(&mut world, id, &SettleOptions::new(240), &th).unwrap();
        let report = check_stability(&traj, &th);
        assert!(report.stable, "{shape:?}: {report:?}");
        assert!(traj.len() <= 60);
    }
}

#[test]
fn overhanging_cuboid_falls() {
    let mut world = table_world();
    // Table edge at x = 0.30; center 0.33 leaves 80% of the footprint outside.
    let id = drop_body(&mut world, Shape::cuboid(0.05, 0.05, 0.05), (0.33, 0.0), 0.0, 0.0);
    let th = StabilityThresholds::default();
    let traj = settle(&mut world, id, &SettleOptions::full(240), &th).unwrap();
    assert!(!check_stability(&traj, &th).stable);
    assert!(traj.last().unwrap().position().z < TOP);
}

#[test]
fn released_body_accelerates_downward() {
    let mut world = table_world();
    let id = drop_body(&mut world, Shape::cuboid(0.03, 0.03, 0.03), (0.0, 0.0), 0.2, 0.0);
    let th = StabilityThresholds::default();
    let traj = settle(&mut world, id, &SettleOptions::new(240), &th).unwrap();
    assert!(!traj.is_empty());
    for w in traj.samples[..20].windows(2) {
        assert!(w[1].linear_velocity().z < w[0].linear_velocity().z);
    }
}

#[test]
fn settling_is_bit_deterministic() {
    let run = || {
        let mut world = table_world();
        drop_body(&mut world, Shape::cuboid(0.05, 0.03, 0.02), (0.0, 0.0), 0.0, 0.0);
        let id = drop_body(&mut world, Shape::cylinder(0.03, 0.05), (0.02, 0.01), 0.05, 0.3);
        let th = StabilityThresholds::default();
        settle(&mut world, id, &SettleOptions::full(240), &th).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn kinetic_energy_dissipates_after_impact() {
    let mut world = table_world();
    let id = drop_body(&mut world, Shape::cuboid(0.04, 0.04, 0.04), (0.0, 0.0), 0.05, 0.2);
    let mut energies = Vec::new();
    let mut landed = None;
    for step in 0..240 {
        world.step().unwrap();
        let body = world.body(id).unwrap();
        energies.push(body.kinetic_energy());
        if landed.is_none() && body.state.position.z < TOP + 0.04 + 0.001 {
            landed = Some(step);
        }
    }
    let start = landed.expect("body never landed") + 2;
    let peak = energies.iter().copied().fold(0.0, f64::max);
    for i in start..energies.len() {
        for j in i..(i + 40).min(energies.len()) {
            assert!(energies[j] <= energies[i] + 0.01 * peak, "step {j} vs {i}");
        }
    }
}

#[test]
fn stacked_cuboids_rest() {
    let th = StabilityThresholds::default();
    let mut world = table_world();
    let bottom = drop_body(&mut world, Shape::cuboid(0.08, 0.06, 0.03), (0.0, 0.0), 0.0, 0.0);
    settle(&mut world, bottom, &SettleOptions::new(240), &th).unwrap();
    let z = TOP + 0.06 + 0.04 + 0.002;
    let top = world.add_body(
        RigidBody::new(
            Shape::cuboid(0.04, 0.04, 0.04),
            0.3,
            0.6,
            0.0,
            BodyState::at_rest(DVec3::new(0.01, 0.0, z), DQuat::from_rotation_z(0.5)),
        )
        .unwrap(),
    );
    let before = world.body(bottom).unwrap().state.position;
    let traj = settle(&mut world, top, &SettleOptions::new(240), &th).unwrap();
    assert!(check_stability(&traj, &th).stable);
    let after = world.body(bottom).unwrap().state.position;
    assert!(before.distance(after) < 0.001);
}
