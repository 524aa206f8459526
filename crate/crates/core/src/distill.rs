//! Placement datasets exported from generated scenes, and a supervised
//! stable-placement regressor trained on them.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use glam::{DVec2, DVec3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_episode, GeneratorConfig, GeneratorEnv, PlacementPolicy, Replayer};
use crate::error::{Error, Result};
use crate::eval::episode_seed;
use crate::observation::{descriptor_features, heightmap_features, render_heightmap, Normalizer, DESCRIPTOR_WIDTH};
use crate::physics::{World, CONTACT_TOLERANCE};
use crate::policy::{Adam, Mlp, MlpCache};
use crate::scene::{ObjectSpec, PlacementRecord, QueriedRegion, SceneSpec, WorldPose};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
/// Views rendered per committed placement.
pub const VIEWS_PER_PLACEMENT: usize = 4;
/// Largest viewpoint translation (m).
pub const VIEW_JITTER: f64 = 0.05;
pub const POSE_WIDTH: usize = 5;

/// Label pose in the region frame: `x, y` relative to the half extents,
/// `z` in action units, yaw relative to the region as `(sin, cos)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseLabel {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub sin_yaw: f64,
    pub cos_yaw: f64,
}

impl PoseLabel {
    pub fn from_pose(region: &QueriedRegion, object: &ObjectSpec, pose: &WorldPose) -> Self {
        let a = region.world_pose_to_action(pose, object);
        let rel = PI * a[3];
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            sin_yaw: rel.sin(),
            cos_yaw: rel.cos(),
        }
    }

    pub fn to_pose(&self, region: &QueriedRegion, object: &ObjectSpec) -> WorldPose {
        let yaw = self.sin_yaw.atan2(self.cos_yaw) / PI;
        region.action_to_world_pose([self.x, self.y, self.z, yaw], object)
    }

    pub fn to_array(&self) -> [f64; POSE_WIDTH] {
        [self.x, self.y, self.z, self.sin_yaw, self.cos_yaw]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            sin_yaw: a[3],
            cos_yaw: a[4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSample {
    pub scene_id: usize,
    /// Index of the placement within its scene.
    pub placement: usize,
    pub view_id: usize,
    /// Normalized heightmap of the jittered view followed by the view
    /// offset relative to the region half extents.
    pub observation: Vec<f64>,
    pub object_descriptor: [f64; DESCRIPTOR_WIDTH],
    pub pose: PoseLabel,
}

impl PlacementSample {
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.observation.clone();
        x.extend_from_slice(&self.object_descriptor);
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub resolution: usize,
    pub generator_seed: u64,
    pub scenes: usize,
    pub placements: usize,
    /// Placements whose label failed to re-validate and were left out.
    pub rejected_labels: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementDataset {
    pub header: DatasetHeader,
    pub samples: Vec<PlacementSample>,
    /// Scenes the samples were drawn from, indexed by `scene_id`.
    pub scenes: Vec<(SceneSpec, Vec<PlacementRecord>)>,
    pub warning: Option<String>,
}

impl PlacementDataset {
    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.observation.len() + DESCRIPTOR_WIDTH)
    }

    /// Uniform subsample of `n` samples (all when `n` is larger).
    pub fn subsample(&self, n: usize, rng: &mut (impl Rng + ?Sized)) -> PlacementDataset {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        let samples: Vec<_> = idx.iter().map(|&i| self.samples[i].clone()).collect();
        PlacementDataset {
            header: DatasetHeader {
                samples: samples.len(),
                ..self.header.clone()
            },
            samples,
            scenes: self.scenes.clone(),
            warning: self.warning.clone(),
        }
    }

    /// Header line followed by one JSON record per sample.
    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *out, &self.header).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut *out, s).map_err(|e| Error::Io(e.into()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<PlacementDataset> {
        let mut lines = input.lines();
        let first = lines.next().ok_or(Error::EmptyDataset)??;
        let header: DatasetHeader = parse_line(&first, 1)?;
        if header.version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(parse_line::<PlacementSample>(&line, i + 2)?);
        }
        if samples.len() != header.samples {
            return Err(Error::LengthMismatch(format!(
                "header declares {} samples, file has {}",
                header.samples,
                samples.len()
            )));
        }
        Ok(PlacementDataset {
            header,
            samples,
            scenes: Vec::new(),
            warning: None,
        })
    }
}

fn parse_line<T: serde::de::DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: format!("line {number}: {}", e.path()),
        message: e.inner().to_string(),
    })
}

/// Heightmap of `region` shifted by `offset` (region frame, m), followed by
/// the offset over the half extents.
pub fn view_features(world: &World, region: &QueriedRegion, norm: &Normalizer, resolution: usize, offset: DVec2) -> Vec<f64> {
    let mut view = *region;
    let shift = region.to_world_xy(offset) - region.to_world_xy(DVec2::ZERO);
    view.center[0] += shift.x;
    view.center[1] += shift.y;
    let map = render_heightmap(world, &view, resolution);
    let mut out = Vec::with_capacity(resolution * resolution + 2);
    heightmap_features(&map, region.surface_z(), norm, &mut out);
    out.push(offset.x / region.half_extents[0]);
    out.push(offset.y / region.half_extents[1]);
    out
}

fn jitter(rng: &mut (impl Rng + ?Sized)) -> DVec2 {
    loop {
        let v = DVec2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        if v.length_squared() <= 1.0 {
            return v * VIEW_JITTER;
        }
    }
}

/// Releases `object` at `pose` (the drop gap is added here) in a copy of
/// `replayer`'s scene; success requires no initial penetration and a stable
/// settle that leaves earlier objects in place.
pub fn verify_placement(replayer: &Replayer<'_>, object: &ObjectSpec, pose: &WorldPose, config: &GeneratorConfig) -> Result<bool> {
    let position = pose.position + DVec3::Z * config.drop_epsilon;
    let body = object.body_at(position, pose.yaw)?;
    if replayer.world().max_penetration(&body) > CONTACT_TOLERANCE {
        return Ok(false);
    }
    let mut trial = replayer.clone();
    Ok(trial.release(object, position, pose.yaw)?.0)
}

/// Samples from one scene: every committed placement rendered from
/// `VIEWS_PER_PLACEMENT` jittered viewpoints of the scene before it.
/// Returns the samples and the number of labels that failed to re-validate.
pub fn scene_samples(
    scene_id: usize,
    spec: &SceneSpec,
    placements: &[PlacementRecord],
    config: &GeneratorConfig,
    resolution: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(Vec<PlacementSample>, usize)> {
    let norm = Normalizer::for_table(&spec.table);
    let mut replayer = Replayer::new(spec, config)?;
    let mut samples = Vec::new();
    let mut rejected = 0;
    for (k, rec) in placements.iter().enumerate() {
        let object = spec.object(&rec.object_id)?;
        let release = WorldPose {
            position: DVec3::from(rec.release_position) - DVec3::Z * config.drop_epsilon,
            yaw: rec.release_yaw,
        };
        let label = PoseLabel::from_pose(&spec.region, object, &release);
        if verify_placement(&replayer, object, &label.to_pose(&spec.region, object), config)? {
            let descriptor = descriptor_features(object, &norm);
            for view_id in 0..VIEWS_PER_PLACEMENT {
                samples.push(PlacementSample {
                    scene_id,
                    placement: k,
                    view_id,
                    observation: view_features(replayer.world(), &spec.region, &norm, resolution, jitter(rng)),
                    object_descriptor: descriptor,
                    pose: label,
                });
            }
        } else {
            rejected += 1;
        }
        if !replayer.place(rec)?.0 {
            // Later placements depend on a scene that no longer reproduces.
            rejected += placements.len() - k - 1;
            break;
        }
    }
    Ok((samples, rejected))
}

/// Runs `scenes` generation episodes with `policy` and turns their
/// committed placements into a dataset of `target` samples.
pub fn export_dataset(
    template: &GeneratorEnv,
    policy: &mut dyn PlacementPolicy,
    scenes: usize,
    target: usize,
    resolution: usize,
    seed: u64,
) -> Result<PlacementDataset> {
    let mut env = template.clone();
    let mut all = Vec::new();
    let mut kept_scenes = Vec::new();
    let mut placements = 0;
    let mut rejected = 0;
    let mut view_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_F1E1D);
    for i in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
        let rec = rollout_episode(policy, &mut env, None, &mut rng as &mut dyn RngCore)?;
        placements += rec.placements.len();
        let (samples, bad) = scene_samples(i, &rec.spec, &rec.placements, env.config(), resolution, &mut view_rng)?;
        rejected += bad;
        all.extend(samples);
        kept_scenes.push((rec.spec, rec.placements));
    }
    let available = all.len();
    let warning = (available < target)
        .then(|| format!("only {available} samples from {placements} placements, fewer than the requested {target}"));
    let full = PlacementDataset {
        header: DatasetHeader {
            version: DATASET_SCHEMA_VERSION,
            resolution,
            generator_seed: seed,
            scenes,
            placements,
            rejected_labels: rejected,
            samples: available,
        },
        samples: all,
        scenes: kept_scenes,
        warning,
    };
    Ok(full.subsample(target, &mut view_rng))
}

/// Re-validates every label of `dataset` in its source scene: the label
/// must encode the recorded release pose and settle stably when released
/// there. Returns the fraction of valid labels.
pub fn label_validity(dataset: &PlacementDataset, config: &GeneratorConfig) -> Result<f64> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut valid = 0;
    for (scene_id, (spec, placements)) in dataset.scenes.iter().enumerate() {
        let mut replayer = Replayer::new(spec, config)?;
        for (k, rec) in placements.iter().enumerate() {
            let object = spec.object(&rec.object_id)?;
            let release = WorldPose {
                position: DVec3::from(rec.release_position) - DVec3::Z * config.drop_epsilon,
                yaw: rec.release_yaw,
            };
            let expected = PoseLabel::from_pose(&spec.region, object, &release);
            for s in dataset.samples.iter().filter(|s| s.scene_id == scene_id && s.placement == k) {
                if s.pose == expected && verify_placement(&replayer, object, &s.pose.to_pose(&spec.region, object), config)? {
                    valid += 1;
                }
            }
            if !replayer.place(rec)?.0 {
                break;
            }
        }
    }
    Ok(valid as f64 / dataset.samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            epochs: 1000,
            batch: 64,
            lr: 1e-3,
        }
    }
}

/// Pose regressor: (view features ⊕ object descriptor) → pose label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegressor {
    pub resolution: usize,
    pub net: Mlp,
}

impl PlacementRegressor {
    pub fn predict(&self, input: &[f64]) -> Result<PoseLabel> {
        Ok(PoseLabel::from_array(&self.net.forward(input)?))
    }

    /// Mean squared error over `samples`.
    pub fn loss(&self, samples: &[PlacementSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            let y = self.net.forward(&s.input())?;
            total += y.iter().zip(s.pose.to_array()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / (samples.len().max(1) * POSE_WIDTH) as f64)
    }
}

/// Trains with minibatch Adam on the mean squared error. Returns the model
/// and the training loss after every epoch.
pub fn train_supervised(dataset: &PlacementDataset, cfg: &SupervisedConfig, seed: u64) -> Result<(PlacementRegressor, Vec<f64>)> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch and epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![dataset.input_dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(POSE_WIDTH);
    let mut net = Mlp::random(&sizes, 1.0, &mut rng)?;
    let mut opt = Adam::new(net.num_params(), cfg.lr);
    let inputs: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.input()).collect();
    let targets: Vec<[f64; POSE_WIDTH]> = dataset.samples.iter().map(|s| s.pose.to_array()).collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grads = vec![0.0; net.num_params()];
    let mut cache = MlpCache::default();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / (idx.len() * POSE_WIDTH) as f64;
            for &i in idx {
                let y = net.forward_cached(&inputs[i], &mut cache)?;
                let mut g = [0.0; POSE_WIDTH];
                for k in 0..POSE_WIDTH {
                    let e = y[k] - targets[i][k];
                    epoch_loss += e * e;
                    g[k] = 2.0 * e * scale;
                }
                net.backward(&cache, &g, &mut grads)?;
            }
            opt.step(net.params_mut(), &grads);
        }
        let loss = epoch_loss / (inputs.len() * POSE_WIDTH) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("supervised loss {loss}")));
        }
        curve.push(loss);
    }
    Ok((
        PlacementRegressor {
            resolution: dataset.header.resolution,
            net,
        },
        curve,
    ))
}

/// A held-out placement problem: a scene prefix and the object to place.
#[derive(Clone, Debug)]
pub struct PlacementTask {
    pub spec: SceneSpec,
    pub prefix: Vec<PlacementRecord>,
    /// The placement the generator committed for this object.
    pub truth: PlacementRecord,
}

/// One placement problem per committed placement of each scene.
pub fn tasks_from_scenes(scenes: &[(SceneSpec, Vec<PlacementRecord>)]) -> Vec<PlacementTask> {
    scenes
        .iter()
        .flat_map(|(spec, placements)| {
            (0..placements.len()).map(move |k| PlacementTask {
                spec: spec.clone(),
                prefix: placements[..k].to_vec(),
                truth: placements[k].clone(),
            })
        })
        .collect()
}

/// Placement problems from every committed placement of `episodes`
/// generation episodes on held-out seeds.
pub fn placement_tasks(template: &GeneratorEnv, policy: &mut dyn PlacementPolicy, episodes: usize, seed: u64) -> Result<Vec<PlacementTask>> {
    let mut env = template.clone();
    let mut scenes = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
        let rec = rollout_episode(policy, &mut env, None, &mut rng as &mut dyn RngCore)?;
        scenes.push((rec.spec, rec.placements));
    }
    Ok(tasks_from_scenes(&scenes))
}

/// Anything that proposes a single pose for a placement task.
pub trait PosePredictor {
    fn predict(&self, features: &[f64]) -> Result<PoseLabel>;
}

impl PosePredictor for PlacementRegressor {
    fn predict(&self, features: &[f64]) -> Result<PoseLabel> {
        PlacementRegressor::predict(self, features)
    }
}

/// Fixed output regardless of the scene.
pub struct ConstantPredictor(pub PoseLabel);

impl PosePredictor for ConstantPredictor {
    fn predict(&self, _features: &[f64]) -> Result<PoseLabel> {
        Ok(self.0)
    }
}

/// Fraction of tasks where the predicted pose settles stably, using the
/// same overlap and stability rules as generation.
pub fn eval_placement(
    predictor: &dyn PosePredictor,
    tasks: &[PlacementTask],
    config: &GeneratorConfig,
    resolution: usize,
) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut successes = 0;
    for task in tasks {
        let mut replayer = Replayer::new(&task.spec, config)?;
        for rec in &task.prefix {
            replayer.place(rec)?;
        }
        let object = task.spec.object(&task.truth.object_id)?;
        let norm = Normalizer::for_table(&task.spec.table);
        let mut x = view_features(replayer.world(), &task.spec.region, &norm, resolution, DVec2::ZERO);
        x.extend_from_slice(&descriptor_features(object, &norm));
        let label = predictor.predict(&x)?;
        let pose = label.to_pose(&task.spec.region, object);
        if pose.position.is_finite() && verify_placement(&replayer, object, &pose, config)? {
            successes += 1;
        }
    }
    Ok(successes as f64 / tasks.len() as f64)
}

/// Success of releasing each task's object at the generator's own pose.
pub fn oracle_success(tasks: &[PlacementTask], config: &GeneratorConfig) -> Result<f64> {
    let mut ok = 0;
    for task in tasks {
        let mut replayer = Replayer::new(&task.spec, config)?;
        for p in &task.prefix {
            replayer.place(p)?;
        }
        let object = task.spec.object(&task.truth.object_id)?;
        let pose = WorldPose {
            position: DVec3::from(task.truth.release_position) - DVec3::Z * config.drop_epsilon,
            yaw: task.truth.release_yaw,
        };
        ok += verify_placement(&replayer, object, &pose, config)? as usize;
    }
    Ok(ok as f64 / tasks.len().max(1) as f64)
}
