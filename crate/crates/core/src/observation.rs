//! Policy observation: region-frame heightmap, object descriptor, attempt
//! history and progress scalars.
//!
//! Layout of the assembled vector:
//!
//! | block      | width          |
//! |------------|----------------|
//! | heightmap  | `G * G`        |
//! | descriptor | 8              |
//! | history    | `slots * 167`  |
//! | progress   | 2              |
//!
//! Heightmap cells are row-major with rows along the region y axis. Each
//! history slot holds 12 trajectory samples of 13 numbers, the 4 action
//! components and a 7 number region descriptor (center, half extents, yaw).

use std::f64::consts::{PI, TAU};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{ShapeKind, Trajectory, TrajectorySample, World};
use crate::scene::{ObjectSpec, QueriedRegion, TableSpec};

pub const TRAJECTORY_SUBSAMPLES: usize = 12;
pub const SAMPLE_WIDTH: usize = 13;
pub const ACTION_WIDTH: usize = 4;
pub const REGION_WIDTH: usize = 7;
pub const SLOT_WIDTH: usize = TRAJECTORY_SUBSAMPLES * SAMPLE_WIDTH + ACTION_WIDTH + REGION_WIDTH;
pub const DESCRIPTOR_WIDTH: usize = 8;
pub const PROGRESS_WIDTH: usize = 2;

/// Point counts of the scene and object clouds the heightmap stands in for.
pub const SCENE_CLOUD_POINTS: usize = 20_480;
pub const OBJECT_CLOUD_POINTS: usize = 1_024;

const RAY_START_HEIGHT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    pub resolution: usize,
    /// Absolute heights (m), row-major over region y then x.
    pub values: Vec<f64>,
}

impl Heightmap {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution + ix]
    }

    /// Region-frame xy of the center of cell `(ix, iy)`.
    pub fn cell_center(region: &QueriedRegion, resolution: usize, ix: usize, iy: usize) -> DVec2 {
        let g = resolution as f64;
        let [hx, hy, _] = region.half_extents;
        DVec2::new(
            ((ix as f64 + 0.5) / g * 2.0 - 1.0) * hx,
            ((iy as f64 + 0.5) / g * 2.0 - 1.0) * hy,
        )
    }
}

/// Casts one vertical ray per cell against every dynamic body.
pub fn render_heightmap(world: &World, region: &QueriedRegion, resolution: usize) -> Heightmap {
    let floor = region.surface_z();
    let z0 = floor + RAY_START_HEIGHT;
    let bodies: Vec<_> = world
        .bodies()
        .iter()
        .filter(|b| !b.is_static())
        .map(|b| {
            let rot = b.rotation();
            let reach = b.shape.aabb_half_extents(&rot);
            (b, rot, reach)
        })
        .collect();
    let mut values = vec![floor; resolution * resolution];
    for iy in 0..resolution {
        for ix in 0..resolution {
            let p = region.to_world_xy(Heightmap::cell_center(region, resolution, ix, iy));
            let cell = &mut values[iy * resolution + ix];
            for (body, rot, reach) in &bodies {
                let c = body.state.position;
                if (p.x - c.x).abs() > reach.x || (p.y - c.y).abs() > reach.y || c.z + reach.z <= *cell {
                    continue;
                }
                let origin = rot.transpose() * (DVec3::new(p.x, p.y, z0) - c);
                let dir = rot.transpose() * DVec3::NEG_Z;
                if let Some(t) = body.shape.ray_cast(origin, dir) {
                    *cell = cell.max(z0 - t);
                }
            }
        }
    }
    Heightmap { resolution, values }
}

/// Highest dynamic-body surface above world point `p`, or `floor` if none.
pub fn height_at(world: &World, p: DVec2, floor: f64) -> f64 {
    let z0 = floor + RAY_START_HEIGHT;
    let mut h = floor;
    for body in world.bodies().iter().filter(|b| !b.is_static()) {
        let c = body.state.position;
        let rot = body.rotation();
        let reach = body.shape.aabb_half_extents(&rot);
        if (p.x - c.x).abs() > reach.x || (p.y - c.y).abs() > reach.y || c.z + reach.z <= h {
            continue;
        }
        let origin = rot.transpose() * (DVec3::new(p.x, p.y, z0) - c);
        if let Some(t) = body.shape.ray_cast(origin, rot.transpose() * DVec3::NEG_Z) {
            h = h.max(z0 - t);
        }
    }
    h
}

/// One-hot kind, dimensions (zero-filled per kind), mass, friction.
pub fn object_descriptor(object: &ObjectSpec) -> [f64; DESCRIPTOR_WIDTH] {
    let mut d = [0.0; DESCRIPTOR_WIDTH];
    let slot = match object.shape.kind() {
        ShapeKind::Cuboid => 0,
        ShapeKind::Cylinder => 1,
        ShapeKind::Sphere => 2,
    };
    d[slot] = 1.0;
    d[3..6].copy_from_slice(&object.shape.dimensions());
    d[6] = object.mass;
    d[7] = object.friction;
    d
}

/// Indices kept when subsampling a trajectory of `len` samples.
pub fn subsample_indices(len: usize) -> Vec<usize> {
    if len <= TRAJECTORY_SUBSAMPLES {
        return (0..len).collect();
    }
    let stride = (len - 1) as f64 / (TRAJECTORY_SUBSAMPLES - 1) as f64;
    (0..TRAJECTORY_SUBSAMPLES).map(|j| (j as f64 * stride).round() as usize).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptSlot {
    /// Up to 12 raw samples; missing rows read as zero.
    pub samples: Vec<TrajectorySample>,
    pub action: [f64; 4],
    pub region: QueriedRegion,
}

impl AttemptSlot {
    pub fn new(action: [f64; 4], trajectory: &Trajectory, region: &QueriedRegion) -> Self {
        Self {
            samples: subsample_indices(trajectory.len())
                .into_iter()
                .map(|i| trajectory.samples[i])
                .collect(),
            action,
            region: *region,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Every failed attempt of the current object.
    Full,
    /// Only the latest attempt.
    ShortMemory,
    /// History block kept at its full width but always zero.
    OpenLoop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttemptHistory {
    capacity: usize,
    rolling: bool,
    slots: Vec<AttemptSlot>,
}

impl AttemptHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rolling: false,
            slots: Vec::with_capacity(capacity),
        }
    }

    /// Buffer that drops its oldest slot instead of rejecting a push.
    pub fn rolling(capacity: usize) -> Self {
        Self {
            rolling: true,
            ..Self::new(capacity)
        }
    }

    pub fn for_mode(mode: HistoryMode, max_attempts: usize) -> Self {
        match mode {
            HistoryMode::ShortMemory => Self::rolling(1),
            HistoryMode::Full | HistoryMode::OpenLoop => Self::new(max_attempts),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[AttemptSlot] {
        &self.slots
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }

    pub fn push(&mut self, action: [f64; 4], trajectory: &Trajectory, region: &QueriedRegion) -> Result<()> {
        if self.slots.len() == self.capacity {
            if !self.rolling || self.capacity == 0 {
                return Err(Error::HistoryFull(self.capacity));
            }
            self.slots.remove(0);
        }
        self.slots.push(AttemptSlot::new(action, trajectory, region));
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub resolution: usize,
    pub max_attempts: usize,
    pub history: HistoryMode,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            max_attempts: 5,
            history: HistoryMode::Full,
        }
    }
}

impl ObservationConfig {
    pub fn history_slots(&self) -> usize {
        match self.history {
            HistoryMode::ShortMemory => 1,
            HistoryMode::Full | HistoryMode::OpenLoop => self.max_attempts,
        }
    }

    pub fn dim(&self) -> usize {
        self.resolution * self.resolution + DESCRIPTOR_WIDTH + self.history_slots() * SLOT_WIDTH + PROGRESS_WIDTH
    }

    pub fn new_history(&self) -> AttemptHistory {
        AttemptHistory::for_mode(self.history, self.max_attempts)
    }
}

/// Placement progress: objects already committed and the 1-based attempt
/// index of the current object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub placed: usize,
    pub total: usize,
    pub attempt: usize,
    pub max_attempts: usize,
}

impl Progress {
    fn scalars(&self) -> [f64; 2] {
        [
            self.placed as f64 / self.total.max(1) as f64,
            self.attempt as f64 / self.max_attempts.max(1) as f64,
        ]
    }
}

/// Length scale and origin used to bring positions to unit range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub origin: DVec3,
    pub length: f64,
}

impl Normalizer {
    pub fn for_table(table: &TableSpec) -> Self {
        Self {
            origin: table.center_top(),
            length: table.half_diagonal(),
        }
    }

    fn sample(&self, s: &TrajectorySample) -> [f64; SAMPLE_WIDTH] {
        let mut out = s.0;
        for k in 0..3 {
            out[k] = (s.0[k] - self.origin[k]) / self.length;
        }
        for v in &mut out[10..13] {
            *v /= TAU;
        }
        out
    }

    fn region(&self, r: &QueriedRegion) -> [f64; REGION_WIDTH] {
        let [cx, cy, cz] = r.center;
        let [hx, hy, hz] = r.half_extents;
        let o = self.origin;
        let l = self.length;
        [(cx - o.x) / l, (cy - o.y) / l, (cz - o.z) / l, hx / l, hy / l, hz / l, r.yaw / PI]
    }
}

/// Writes the normalized heightmap block (heights above the region surface).
pub fn heightmap_features(map: &Heightmap, surface_z: f64, norm: &Normalizer, out: &mut Vec<f64>) {
    out.extend(map.values.iter().map(|h| (h - surface_z) / norm.length));
}

pub fn descriptor_features(object: &ObjectSpec, norm: &Normalizer) -> [f64; DESCRIPTOR_WIDTH] {
    let mut d = object_descriptor(object);
    for v in &mut d[3..6] {
        *v /= norm.length;
    }
    d
}

pub fn assemble_observation(
    config: &ObservationConfig,
    norm: &Normalizer,
    world: &World,
    region: &QueriedRegion,
    object: &ObjectSpec,
    history: &AttemptHistory,
    progress: Progress,
) -> Result<Vec<f64>> {
    let map = render_heightmap(world, region, config.resolution);
    assemble_with_heightmap(config, norm, &map, region, object, history, progress)
}

pub fn assemble_with_heightmap(
    config: &ObservationConfig,
    norm: &Normalizer,
    map: &Heightmap,
    region: &QueriedRegion,
    object: &ObjectSpec,
    history: &AttemptHistory,
    progress: Progress,
) -> Result<Vec<f64>> {
    if map.resolution != config.resolution {
        return Err(Error::ShapeMismatch {
            expected: config.resolution,
            got: map.resolution,
        });
    }
    let mut out = Vec::with_capacity(config.dim());
    heightmap_features(map, region.surface_z(), norm, &mut out);
    out.extend(descriptor_features(object, norm));
    let slots = config.history_slots();
    let history_start = out.len();
    out.resize(history_start + slots * SLOT_WIDTH, 0.0);
    if config.history != HistoryMode::OpenLoop {
        for (j, slot) in history.slots().iter().take(slots).enumerate() {
            let base = history_start + j * SLOT_WIDTH;
            for (t, s) in slot.samples.iter().enumerate() {
                let at = base + t * SAMPLE_WIDTH;
                out[at..at + SAMPLE_WIDTH].copy_from_slice(&norm.sample(s));
            }
            let at = base + TRAJECTORY_SUBSAMPLES * SAMPLE_WIDTH;
            out[at..at + ACTION_WIDTH].copy_from_slice(&slot.action);
            out[at + ACTION_WIDTH..at + ACTION_WIDTH + REGION_WIDTH].copy_from_slice(&norm.region(&slot.region));
        }
    }
    out.extend(progress.scalars());
    debug_assert_eq!(out.len(), config.dim());
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObservation(i));
    }
    Ok(out)
}
