//! wasm entry points for the browser demo. Each exported function returns a
//! JSON string; the plain Rust versions below them are what the tests use.

use clutter_core::env::{GeneratorConfig, GeneratorEnv};
use clutter_core::eval::rrs_episode;
use clutter_core::observation::ObservationConfig;
use clutter_core::physics::{check_stability, settle, BodyState, RigidBody, SettleOptions, Shape, StabilityThresholds};
use clutter_core::policy::dist::{beta_entropy, beta_log_prob, sample_beta};
use clutter_core::scene::{SceneSpec, TableSpec};
use glam::{DQuat, DVec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SettleView {
    pub stable: bool,
    pub stable_step: usize,
    /// Body center height above the table top, per step (m).
    pub heights: Vec<f64>,
    /// Angle between the body's up axis and world up, per step (degrees).
    pub tilt: Vec<f64>,
    pub final_position: [f64; 3],
}

/// Drops a shape near the table's +x edge with `overhang` of its footprint
/// width past the edge and settles it for one second.
pub fn settle_view(shape: &str, size: f64, overhang: f64, yaw: f64) -> clutter_core::Result<SettleView> {
    let table = TableSpec::standard();
    let shape = match shape {
        "box" => Shape::cuboid(size, size, size),
        "flat" => Shape::cuboid(size * 1.5, size, size * 0.4),
        "tall" => Shape::cuboid(size * 0.5, size * 0.5, size * 1.5),
        "cylinder" => Shape::cylinder(size, size),
        "sphere" => Shape::sphere(size),
        other => return Err(clutter_core::Error::InvalidShape(format!("unknown demo shape `{other}`"))),
    };
    let half = shape.footprint_half_extents()[0];
    let edge = table.width / 2.0;
    let x = edge - half + 2.0 * half * overhang.clamp(0.0, 1.0);
    let top = table.top_z();
    let (mut world, _) = SceneSpec::standard(0, 1).build_world()?;
    let position = DVec3::new(x, 0.0, top + shape.bottom_offset() + 0.002);
    let body = RigidBody::new(shape, 0.4, 0.6, 0.0, BodyState::at_rest(position, DQuat::from_rotation_z(yaw)))?;
    let id = world.add_body(body);
    let thresholds = StabilityThresholds::default();
    let traj = settle(&mut world, id, &SettleOptions::full(240), &thresholds)?;
    let report = check_stability(&traj, &thresholds);
    let heights = traj.samples.iter().map(|s| s.position().z - top).collect();
    let tilt = traj
        .samples
        .iter()
        .map(|s| (s.orientation() * DVec3::Z).dot(DVec3::Z).clamp(-1.0, 1.0).acos().to_degrees())
        .collect();
    let last = traj.last().map_or(position, |s| s.position());
    Ok(SettleView {
        stable: report.stable,
        stable_step: report.stable_step,
        heights,
        tilt,
        final_position: last.to_array(),
    })
}

#[derive(Debug, Serialize)]
pub struct BetaView {
    /// Action values in `[-1, 1]`.
    pub x: Vec<f64>,
    /// Density of the mapped action `2u - 1`.
    pub density: Vec<f64>,
    pub entropy: f64,
    pub mean: f64,
    /// Counts of sampled actions over `bins` equal bins of `[-1, 1]`.
    pub histogram: Vec<usize>,
}

pub fn beta_view(alpha: f64, beta: f64, points: usize, samples: usize, bins: usize, seed: u64) -> clutter_core::Result<BetaView> {
    if !(alpha > 0.0 && beta > 0.0) || points < 2 || bins == 0 {
        return Err(clutter_core::Error::Domain(format!(
            "need α, β > 0, at least 2 points and 1 bin (got α={alpha}, β={beta})"
        )));
    }
    let mut x = Vec::with_capacity(points);
    let mut density = Vec::with_capacity(points);
    for i in 0..points {
        // Open interval: the density can be infinite at the ends.
        let u = (i as f64 + 0.5) / points as f64;
        x.push(2.0 * u - 1.0);
        density.push(0.5 * beta_log_prob(alpha, beta, u)?.exp());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut histogram = vec![0; bins];
    for _ in 0..samples {
        let u = sample_beta(alpha, beta, &mut rng);
        histogram[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(BetaView {
        x,
        density,
        entropy: beta_entropy(alpha, beta) + 2f64.ln(),
        mean: 2.0 * alpha / (alpha + beta) - 1.0,
        histogram,
    })
}

#[derive(Debug, Serialize)]
pub struct PlacedView {
    pub id: String,
    pub kind: String,
    pub color: String,
    /// Settled position: region-frame `(x, y)` and world height.
    pub position: [f64; 3],
    pub yaw: f64,
    pub dimensions: [f64; 3],
}

#[derive(Debug, Serialize)]
pub struct RrsView {
    pub success: bool,
    pub attempts: Vec<usize>,
    pub resolution: usize,
    /// Heights above the region surface, row-major over region y then x (m).
    pub heightmap: Vec<f64>,
    /// Region half extents (x, y).
    pub half_extents: [f64; 2],
    pub objects: Vec<PlacedView>,
}

/// One random-rejection-sampling episode on the standard table.
pub fn rrs_view(group: usize, objects: usize, seed: u64, resolution: usize) -> clutter_core::Result<RrsView> {
    let spec = SceneSpec::standard(group, objects);
    let obs = ObservationConfig {
        resolution,
        ..Default::default()
    };
    let config = GeneratorConfig {
        stop_when_decided: true,
        ..Default::default()
    };
    let mut env = GeneratorEnv::new(spec, config, obs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let record = rrs_episode(&mut env, &mut rng)?;
    let region = *env.region();
    let surface = region.surface_z();
    let heightmap = env.heightmap().values.iter().map(|h| h - surface).collect();
    let placed = record
        .placements
        .iter()
        .map(|p| {
            let o = record.spec.object(&p.object_id)?;
            let local = region.to_local_xy(glam::DVec2::new(p.position[0], p.position[1]));
            Ok(PlacedView {
                id: o.id.clone(),
                kind: format!("{:?}", o.shape.kind()).to_lowercase(),
                color: o.color.clone(),
                position: [local.x, local.y, p.position[2]],
                yaw: p.yaw - region.yaw,
                dimensions: o.shape.dimensions(),
            })
        })
        .collect::<clutter_core::Result<_>>()?;
    Ok(RrsView {
        success: record.success,
        attempts: record.attempts_per_object(),
        resolution,
        heightmap,
        half_extents: [region.half_extents[0], region.half_extents[1]],
        objects: placed,
    })
}

fn to_js<T: Serialize>(r: clutter_core::Result<T>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen]
pub fn settle_demo(shape: &str, size: f64, overhang: f64, yaw: f64) -> Result<String, JsValue> {
    to_js(settle_view(shape, size, overhang, yaw))
}

#[wasm_bindgen]
pub fn beta_explorer(alpha: f64, beta: f64, samples: usize, seed: u64) -> Result<String, JsValue> {
    to_js(beta_view(alpha, beta, 200, samples, 40, seed))
}

#[wasm_bindgen]
pub fn rrs_scene(group: usize, objects: usize, seed: u64, resolution: usize) -> Result<String, JsValue> {
    to_js(rrs_view(group, objects, seed, resolution))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_box_rests_and_hanging_box_falls() {
        let rest = settle_view("box", 0.04, 0.0, 0.0).unwrap();
        assert!(rest.stable);
        assert!(rest.heights.last().unwrap() > &0.035);
        let fall = settle_view("box", 0.04, 0.9, 0.0).unwrap();
        assert!(!fall.stable);
        assert!(fall.heights.last().unwrap() < &0.0);
    }

    #[test]
    fn unknown_shape_is_rejected() {
        assert!(settle_view("torus", 0.04, 0.0, 0.0).is_err());
    }

    #[test]
    fn uniform_beta_is_flat() {
        let v = beta_view(1.0, 1.0, 50, 4000, 4, 0).unwrap();
        assert!(v.density.iter().all(|d| (d - 0.5).abs() < 1e-12));
        assert!((v.entropy - 2f64.ln()).abs() < 1e-12);
        assert_eq!(v.histogram.iter().sum::<usize>(), 4000);
        assert!(v.histogram.iter().all(|&c| c > 800 && c < 1200), "{:?}", v.histogram);
    }

    #[test]
    fn rrs_view_is_seeded() {
        let a = serde_json::to_string(&rrs_view(0, 3, 5, 16).unwrap()).unwrap();
        let b = serde_json::to_string(&rrs_view(0, 3, 5, 16).unwrap()).unwrap();
        assert_eq!(a, b);
        let v = rrs_view(0, 3, 5, 16).unwrap();
        assert_eq!(v.heightmap.len(), 256);
        assert!(v.heightmap.iter().any(|h| *h > 0.0) == !v.objects.is_empty());
    }
}
