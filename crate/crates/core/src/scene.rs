//! Scene description: support table, queried region, object catalog and
//! placement records, plus region transforms and the scene document format.

use std::f64::consts::PI;

use glam::{DQuat, DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{BodyId, BodyState, RigidBody, Shape, ShapeKind, World};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Seeds of the five procedural object groups.
pub const GROUP_SEEDS: [u64; 5] = [1_001, 2_002, 3_003, 4_004, 5_005];

const CATALOG_DIM_RANGE: (f64, f64) = (0.02, 0.12);
const CATALOG_MASS_RANGE: (f64, f64) = (0.05, 2.0);
const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "orange", "purple", "gray", "white"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub shape: Shape,
    pub mass: f64,
    pub friction: f64,
    #[serde(default)]
    pub color: String,
}

impl ObjectSpec {
    pub fn body_at(&self, position: DVec3, yaw: f64) -> Result<RigidBody> {
        RigidBody::new(
            self.shape,
            self.mass,
            self.friction,
            0.0,
            BodyState::at_rest(position, DQuat::from_rotation_z(yaw)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablePose {
    /// Table center on the floor (z is the floor height).
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "l")]
    pub length: f64,
    #[serde(rename = "h")]
    pub height: f64,
    pub pose: TablePose,
    #[serde(default = "default_table_friction")]
    pub friction: f64,
}

fn default_table_friction() -> f64 {
    0.6
}

impl TableSpec {
    pub fn new(width: f64, length: f64, height: f64) -> Self {
        Self {
            width,
            length,
            height,
            pose: TablePose {
                position: [0.0; 3],
                yaw: 0.0,
            },
            friction: default_table_friction(),
        }
    }

    /// 60 × 70 × 70 cm training table.
    pub fn standard() -> Self {
        Self::new(0.60, 0.70, 0.70)
    }

    /// 140 × 140 × 70 cm table used for region-change evaluation.
    pub fn enlarged() -> Self {
        Self::new(1.40, 1.40, 0.70)
    }

    pub fn top_z(&self) -> f64 {
        self.pose.position[2] + self.height
    }

    pub fn center_top(&self) -> DVec3 {
        DVec3::new(self.pose.position[0], self.pose.position[1], self.top_z())
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.width * self.width + self.length * self.length).sqrt()
    }

    pub fn body(&self) -> Result<RigidBody> {
        let [x, y, z] = self.pose.position;
        RigidBody::new_static(
            Shape::cuboid(0.5 * self.width, 0.5 * self.length, 0.5 * self.height),
            self.friction,
            DVec3::new(x, y, z + 0.5 * self.height),
            DQuat::from_rotation_z(self.pose.yaw),
        )
    }

    /// Whether a world-frame xy point lies on the tabletop.
    pub fn contains_xy(&self, p: DVec2) -> bool {
        let local = DVec2::from_angle(-self.pose.yaw).rotate(p - DVec2::new(self.pose.position[0], self.pose.position[1]));
        let eps = 1e-9;
        local.x.abs() <= 0.5 * self.width + eps && local.y.abs() <= 0.5 * self.length + eps
    }
}

/// Box above the support surface into which objects are placed; the frame
/// of the placement action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueriedRegion {
    /// World frame; z is the support-surface top.
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub yaw: f64,
}

impl QueriedRegion {
    /// Region covering the whole top of `table`.
    pub fn covering(table: &TableSpec, half_height: f64) -> Self {
        Self {
            center: table.center_top().to_array(),
            half_extents: [0.5 * table.width, 0.5 * table.length, half_height],
            yaw: table.pose.yaw,
        }
    }

    pub fn centered(table: &TableSpec, half_x: f64, half_y: f64, half_height: f64) -> Self {
        Self {
            center: table.center_top().to_array(),
            half_extents: [half_x, half_y, half_height],
            yaw: table.pose.yaw,
        }
    }

    pub fn center(&self) -> DVec3 {
        DVec3::from(self.center)
    }

    pub fn surface_z(&self) -> f64 {
        self.center[2]
    }

    pub fn footprint_area(&self) -> f64 {
        4.0 * self.half_extents[0] * self.half_extents[1]
    }

    /// Region-frame xy to world xy.
    pub fn to_world_xy(&self, local: DVec2) -> DVec2 {
        DVec2::new(self.center[0], self.center[1]) + DVec2::from_angle(self.yaw).rotate(local)
    }

    /// World xy to region-frame xy.
    pub fn to_local_xy(&self, world: DVec2) -> DVec2 {
        DVec2::from_angle(-self.yaw).rotate(world - DVec2::new(self.center[0], self.center[1]))
    }

    pub fn corners_xy(&self) -> [DVec2; 4] {
        let [hx, hy, _] = self.half_extents;
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sy)| self.to_world_xy(DVec2::new(sx * hx, sy * hy)))
    }

    pub fn validate(&self, table: &TableSpec) -> Result<()> {
        if !self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            return Err(Error::InvalidRegion(format!("half extents {:?} must be positive", self.half_extents)));
        }
        if (self.surface_z() - table.top_z()).abs() > 1e-9 {
            return Err(Error::InvalidRegion("region is not on the support surface".into()));
        }
        if !self.corners_xy().iter().all(|c| table.contains_xy(*c)) {
            return Err(Error::InvalidRegion("region footprint leaves the support surface".into()));
        }
        Ok(())
    }

    /// Maps a relative action in `[-1, 1]^4` to a world pose for `object`.
    pub fn action_to_world_pose(&self, action: [f64; 4], object: &ObjectSpec) -> WorldPose {
        let [hx, hy, hz] = self.half_extents;
        let xy = self.to_world_xy(DVec2::new(action[0] * hx, action[1] * hy));
        let z_lo = self.surface_z() + object.shape.bottom_offset();
        let z_hi = self.surface_z() + 2.0 * hz;
        let z = z_lo + 0.5 * (action[2] + 1.0) * (z_hi - z_lo);
        WorldPose {
            position: DVec3::new(xy.x, xy.y, z),
            yaw: self.yaw + PI * action[3],
        }
    }

    /// Inverse of [`Self::action_to_world_pose`] (yaw taken relative to the
    /// region without wrapping).
    pub fn world_pose_to_action(&self, pose: &WorldPose, object: &ObjectSpec) -> [f64; 4] {
        let [hx, hy, hz] = self.half_extents;
        let local = self.to_local_xy(pose.position.truncate());
        let z_lo = self.surface_z() + object.shape.bottom_offset();
        let z_hi = self.surface_z() + 2.0 * hz;
        let span = z_hi - z_lo;
        let z = if span.abs() > 1e-12 {
            2.0 * (pose.position.z - z_lo) / span - 1.0
        } else {
            -1.0
        };
        [local.x / hx, local.y / hy, z, (pose.yaw - self.yaw) / PI]
    }

    pub fn apply(&self, delta: &RegionDelta) -> QueriedRegion {
        let mut out = *self;
        out.half_extents[0] += delta.half_extent_delta[0];
        out.half_extents[1] += delta.half_extent_delta[1];
        out.yaw += delta.rotation;
        out.center[0] += delta.translation[0];
        out.center[1] += delta.translation[1];
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldPose {
    pub position: DVec3,
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Identity,
    Translation,
    Rotation,
    Shrinkage,
    Expansion,
    Combined,
}

impl ChangeKind {
    pub const ALL: [ChangeKind; 6] = [
        ChangeKind::Identity,
        ChangeKind::Translation,
        ChangeKind::Rotation,
        ChangeKind::Shrinkage,
        ChangeKind::Expansion,
        ChangeKind::Combined,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ChangeKind::Identity => "original",
            ChangeKind::Translation => "translation",
            ChangeKind::Rotation => "rotation",
            ChangeKind::Shrinkage => "shrinkage",
            ChangeKind::Expansion => "expansion",
            ChangeKind::Combined => "combined",
        }
    }
}

/// A test-time change of the queried region together with its sampling
/// ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionChange {
    pub kind: ChangeKind,
    /// Translation is sampled from `[-max_translation, max_translation]` per axis (m).
    pub max_translation: f64,
    /// Rotation is sampled from `[-max_rotation, max_rotation]` (rad).
    pub max_rotation: f64,
    /// Half-extent changes have magnitude in `(0, max_scale]` (m).
    pub max_scale: f64,
}

impl RegionChange {
    pub fn new(kind: ChangeKind) -> Self {
        Self {
            kind,
            max_translation: 0.15,
            max_rotation: PI,
            max_scale: 0.10,
        }
    }

    pub fn sample(&self, rng: &mut (impl Rng + ?Sized)) -> RegionDelta {
        let t = self.max_translation;
        let r = self.max_rotation;
        // Magnitudes lie in (0, max].
        let mut magnitude = || self.max_scale * (1.0 - rng.random::<f64>());
        let mut delta = RegionDelta::default();
        match self.kind {
            ChangeKind::Identity => {}
            ChangeKind::Translation => delta.translation = [rng.random_range(-t..=t), rng.random_range(-t..=t)],
            ChangeKind::Rotation => delta.rotation = rng.random_range(-r..=r),
            ChangeKind::Shrinkage => delta.half_extent_delta = [-magnitude(), -magnitude()],
            ChangeKind::Expansion => delta.half_extent_delta = [magnitude(), magnitude()],
            ChangeKind::Combined => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let scale = self.max_scale;
                delta.half_extent_delta = [
                    sign * scale * (1.0 - rng.random::<f64>()),
                    sign * scale * (1.0 - rng.random::<f64>()),
                ];
                delta.rotation = rng.random_range(-r..=r);
                delta.translation = [rng.random_range(-t..=t), rng.random_range(-t..=t)];
            }
        }
        delta
    }
}

/// Concrete region change: half extents are scaled first, then the region is
/// rotated about its center, then translated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionDelta {
    pub translation: [f64; 2],
    pub rotation: f64,
    pub half_extent_delta: [f64; 2],
}

/// Samples `change` and applies it, rejecting results that leave the table.
pub fn transform_region(
    region: &QueriedRegion,
    change: &RegionChange,
    table: &TableSpec,
    rng: &mut (impl Rng + ?Sized),
) -> Result<QueriedRegion> {
    let delta = change.sample(rng);
    let out = region.apply(&delta);
    if out.half_extents.iter().any(|h| *h <= 0.0) {
        return Err(Error::InvalidChange(format!("non-positive half extents {:?}", out.half_extents)));
    }
    out.validate(table)
        .map_err(|e| Error::InvalidChange(format!("{:?} produced an invalid region: {e}", change.kind)))?;
    Ok(out)
}

/// A committed placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRecord {
    pub object_id: String,
    /// Pose at release (after any overlap nudge and the drop gap).
    pub release_position: [f64; 3],
    pub release_yaw: f64,
    /// Pose once settled.
    pub position: [f64; 3],
    /// Quaternion `xyzw`.
    pub orientation: [f64; 4],
    pub yaw: f64,
    /// Relative action in `[-1, 1]^4` that produced the placement.
    pub action: [f64; 4],
    /// 1-based attempt count for this object.
    pub attempts: usize,
    pub stable_step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub table: TableSpec,
    pub region: QueriedRegion,
    pub catalog: Vec<ObjectSpec>,
    /// Object ids in placement order.
    pub query_order: Vec<String>,
}

impl SceneSpec {
    /// Standard table with the region covering its top and the first
    /// `n_objects` of group `group` queried in catalog order.
    pub fn standard(group: usize, n_objects: usize) -> Self {
        let table = TableSpec::standard();
        let region = QueriedRegion::covering(&table, 0.15);
        Self::from_group(table, region, group, n_objects)
    }

    pub fn from_group(table: TableSpec, region: QueriedRegion, group: usize, n_objects: usize) -> Self {
        let catalog = procedural_catalog(GROUP_SEEDS[group % GROUP_SEEDS.len()], n_objects.max(1));
        let query_order = catalog.iter().take(n_objects).map(|o| o.id.clone()).collect();
        Self {
            table,
            region,
            catalog,
            query_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate(&self.table)?;
        for (i, a) in self.catalog.iter().enumerate() {
            a.shape.validate()?;
            if self.catalog[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::InvalidConfig(format!("duplicate object id {}", a.id)));
            }
        }
        for id in &self.query_order {
            self.object(id)?;
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Result<&ObjectSpec> {
        self.catalog
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown object id {id}")))
    }

    pub fn queried_objects(&self) -> Result<Vec<ObjectSpec>> {
        self.query_order.iter().map(|id| self.object(id).cloned()).collect()
    }

    /// World containing only the static table.
    pub fn build_world(&self) -> Result<(World, BodyId)> {
        let mut world = World::default();
        let id = world.add_body(self.table.body()?);
        Ok((world, id))
    }
}

/// Deterministic catalog of `n` primitive objects. Dimensions (half
/// extents, radii, half heights) lie in 2-12 cm.
pub fn procedural_catalog(group_seed: u64, n: usize) -> Vec<ObjectSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(group_seed);
    let (lo, hi) = CATALOG_DIM_RANGE;
    (0..n)
        .map(|i| {
            let roll: f64 = rng.random();
            let mut dim = || rng.random_range(lo..=hi);
            let shape = if roll < 0.55 {
                Shape::cuboid(dim(), dim(), dim())
            } else if roll < 0.9 {
                Shape::cylinder(dim(), dim())
            } else {
                Shape::sphere(dim())
            };
            let volume = match shape {
                Shape::Cuboid { half_extents: [x, y, z] } => 8.0 * x * y * z,
                Shape::Cylinder { radius, half_height } => PI * radius * radius * 2.0 * half_height,
                Shape::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            };
            let density = rng.random_range(250.0..900.0);
            let mass = (volume * density).clamp(CATALOG_MASS_RANGE.0, CATALOG_MASS_RANGE.1);
            let kind = match shape.kind() {
                ShapeKind::Cuboid => "box",
                ShapeKind::Cylinder => "cyl",
                ShapeKind::Sphere => "ball",
            };
            ObjectSpec {
                id: format!("g{group_seed}-{i:02}-{kind}"),
                shape,
                mass,
                friction: rng.random_range(0.4..0.9),
                color: COLORS[rng.random_range(0..COLORS.len())].to_string(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDocument {
    version: u32,
    table: TableSpec,
    region: QueriedRegion,
    catalog: Vec<ObjectSpec>,
    #[serde(default)]
    query_order: Vec<String>,
    placements: Vec<PlacementRecord>,
}

pub fn serialize_scene(spec: &SceneSpec, placements: &[PlacementRecord]) -> String {
    let doc = SceneDocument {
        version: SCENE_SCHEMA_VERSION,
        table: spec.table,
        region: spec.region,
        catalog: spec.catalog.clone(),
        query_order: spec.query_order.clone(),
        placements: placements.to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("scene documents always serialize")
}

pub fn deserialize_scene(text: &str) -> Result<(SceneSpec, Vec<PlacementRecord>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: SceneDocument = serde_path_to_error::deserialize(de).map_err(Error::parse)?;
    if doc.version != SCENE_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: doc.version,
            expected: SCENE_SCHEMA_VERSION,
        });
    }
    let spec = SceneSpec {
        table: doc.table,
        region: doc.region,
        catalog: doc.catalog,
        query_order: doc.query_order,
    };
    Ok((spec, doc.placements))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn object() -> ObjectSpec {
        procedural_catalog(GROUP_SEEDS[0], 1).remove(0)
    }

    #[test]
    fn identity_change_is_noop() {
        let table = TableSpec::enlarged();
        let region = QueriedRegion::centered(&table, 0.30, 0.35, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = transform_region(&region, &RegionChange::new(ChangeKind::Identity), &table, &mut rng).unwrap();
        assert_eq!(out, region);
    }

    #[test]
    fn max_translation_stays_on_large_table() {
        let table = TableSpec::enlarged();
        let region = QueriedRegion::centered(&table, 0.30, 0.35, 0.15);
        let moved = region.apply(&RegionDelta {
            translation: [0.15, 0.0],
            ..Default::default()
        });
        assert!((moved.center[0] - 0.15).abs() < 1e-12);
        moved.validate(&table).unwrap();
    }

    #[test]
    fn maximal_shrinkage() {
        let table = TableSpec::enlarged();
        let region = QueriedRegion::centered(&table, 0.30, 0.35, 0.15);
        let shrunk = region.apply(&RegionDelta {
            half_extent_delta: [-0.10, -0.10],
            ..Default::default()
        });
        assert!((shrunk.half_extents[0] - 0.20).abs() < 1e-12);
        assert!((shrunk.half_extents[1] - 0.25).abs() < 1e-12);
        shrunk.validate(&table).unwrap();
    }

    #[test]
    fn sampled_changes_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let d = RegionChange::new(ChangeKind::Shrinkage).sample(&mut rng);
            assert!(d.half_extent_delta.iter().all(|x| *x >= -0.10 && *x < 0.0));
            let d = RegionChange::new(ChangeKind::Expansion).sample(&mut rng);
            assert!(d.half_extent_delta.iter().all(|x| *x > 0.0 && *x <= 0.10));
            let d = RegionChange::new(ChangeKind::Translation).sample(&mut rng);
            assert!(d.translation.iter().all(|x| x.abs() <= 0.15));
            let d = RegionChange::new(ChangeKind::Rotation).sample(&mut rng);
            assert!(d.rotation.abs() <= PI);
        }
    }

    #[test]
    fn region_leaving_table_is_rejected() {
        let table = TableSpec::standard();
        let region = QueriedRegion::covering(&table, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = transform_region(&region, &RegionChange::new(ChangeKind::Expansion), &table, &mut rng);
        assert!(matches!(err, Err(Error::InvalidChange(_))));
    }

    #[test]
    fn shrinking_tiny_region_errors() {
        let table = TableSpec::standard();
        let region = QueriedRegion::centered(&table, 0.05, 0.05, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut saw_error = false;
        for _ in 0..50 {
            match transform_region(&region, &RegionChange::new(ChangeKind::Shrinkage), &table, &mut rng) {
                Ok(r) => assert!(r.half_extents.iter().all(|h| *h > 0.0)),
                Err(Error::InvalidChange(_)) => saw_error = true,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn action_mapping_examples() {
        let table = TableSpec::standard();
        let region = QueriedRegion::covering(&table, 0.15);
        let obj = object();
        let rest = region.action_to_world_pose([0.0, 0.0, -1.0, 0.0], &obj);
        assert!((rest.position - DVec3::new(0.0, 0.0, 0.70 + obj.shape.bottom_offset())).length() < 1e-12);
        assert_eq!(rest.yaw, region.yaw);
        let corner = region.action_to_world_pose([1.0, 1.0, 0.0, 0.0], &obj);
        assert!((corner.position.x - 0.30).abs() < 1e-12 && (corner.position.y - 0.35).abs() < 1e-12);
        let turned = region.action_to_world_pose([0.0, 0.0, 0.0, 0.5], &obj);
        assert!((turned.yaw - PI / 2.0).abs() < 1e-12);
        let top = region.action_to_world_pose([0.0, 0.0, 1.0, 0.0], &obj);
        assert!((top.position.z - (0.70 + 0.30)).abs() < 1e-12);
    }

    #[test]
    fn catalog_is_deterministic_and_unique() {
        let a = procedural_catalog(42, 10);
        assert_eq!(a, procedural_catalog(42, 10));
        assert_eq!(a.len(), 10);
        let mut ids: Vec<_> = a.iter().map(|o| o.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn catalog_dimensions_in_range_over_many_seeds() {
        for seed in 0..1000 {
            for o in procedural_catalog(seed, 10) {
                let dims = o.shape.dimensions();
                let used = match o.shape.kind() {
                    ShapeKind::Cuboid => 3,
                    ShapeKind::Cylinder => 2,
                    ShapeKind::Sphere => 1,
                };
                assert!(dims[..used].iter().all(|d| (0.02..=0.12).contains(d)), "{o:?}");
                assert!((0.05..=2.0).contains(&o.mass));
            }
        }
    }

    #[test]
    fn empty_placements_round_trip() {
        let spec = SceneSpec::standard(0, 3);
        let text = serialize_scene(&spec, &[]);
        let (back, placements) = deserialize_scene(&text).unwrap();
        assert_eq!(back, spec);
        assert!(placements.is_empty());
    }

    #[test]
    fn truncated_document_names_missing_field() {
        let spec = SceneSpec::standard(0, 2);
        let mut value: serde_json::Value = serde_json::from_str(&serialize_scene(&spec, &[])).unwrap();
        value["table"].as_object_mut().unwrap().remove("h");
        let err = deserialize_scene(&value.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("table") && msg.contains("`h`"), "{msg}");

        value.as_object_mut().unwrap().remove("placements");
        let err = deserialize_scene(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("table") || err.to_string().contains("placements"));
    }

    #[test]
    fn wrong_version_rejected() {
        let spec = SceneSpec::standard(0, 2);
        let text = serialize_scene(&spec, &[]).replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(deserialize_scene(&text), Err(Error::SchemaVersion { found: 9, .. })));
    }

    fn arb_record() -> impl Strategy<Value = PlacementRecord> {
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform4(-1.0f64..1.0), 1usize..6, 0usize..240).prop_map(
            |(p, q, attempts, stable_step)| PlacementRecord {
                object_id: "g1001-00-box".into(),
                release_position: p,
                release_yaw: q[0] * 3.0,
                position: [p[0] * 0.3, p[1] / 7.0, p[2] + 0.7],
                orientation: q,
                yaw: q[1],
                action: q,
                attempts,
                stable_step,
            },
        )
    }

    proptest! {
        #[test]
        fn scene_round_trip_is_exact(records in prop::collection::vec(arb_record(), 0..10), group in 0usize..5) {
            let spec = SceneSpec::standard(group, 5);
            let (back_spec, back) = deserialize_scene(&serialize_scene(&spec, &records)).unwrap();
            prop_assert_eq!(back_spec, spec);
            prop_assert_eq!(back, records);
        }

        #[test]
        fn action_mapping_is_monotone_and_invertible(a in prop::array::uniform4(-1.0f64..1.0), da in 0.001f64..0.5, yaw in -PI..PI) {
            let table = TableSpec::enlarged();
            let region = QueriedRegion { yaw, ..QueriedRegion::centered(&table, 0.3, 0.35, 0.15) };
            let obj = object();
            let pose = region.action_to_world_pose(a, &obj);
            let back = region.world_pose_to_action(&pose, &obj);
            for k in 0..4 {
                prop_assert!((back[k] - a[k]).abs() < 1e-9);
            }
            // Increasing one component moves the pose forward along that region axis.
            for k in 0..4 {
                let mut b = a;
                b[k] = (b[k] + da).min(1.0);
                if b[k] <= a[k] { continue; }
                let moved = region.world_pose_to_action(&region.action_to_world_pose(b, &obj), &obj);
                prop_assert!(moved[k] > back[k]);
            }
        }
    }
}
