//! Baselines and evaluation: random rejection sampling, success and
//! stable-step statistics, diversity maps, region generalization and
//! attempt-budget studies.

use std::f64::consts::PI;
use std::time::Instant;

use glam::{DVec2, DVec3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_episode, ActionMode, EpisodeRecord, GeneratorConfig, GeneratorEnv, NetworkPolicy, PlacementPolicy, Proposal};
use crate::error::{Error, Result};
use crate::observation::{height_at, HistoryMode, ObservationConfig};
use crate::physics::Shape;
use crate::policy::{ActorCritic, HeadKind};
use crate::ppo::{train, TrainConfig, TrainOutcome};
use crate::scene::{ChangeKind, ObjectSpec, QueriedRegion, RegionChange, SceneSpec, WorldPose};

/// Footprint samples per axis for the support-height query.
const SUPPORT_GRID: usize = 7;

/// Highest scene surface under the object's footprint at `(xy, yaw)`.
pub fn support_height(env: &GeneratorEnv, object: &ObjectSpec, xy: DVec2, yaw: f64) -> f64 {
    let floor = env.region().surface_z();
    let [fx, fy] = object.shape.footprint_half_extents();
    let round = !matches!(object.shape, Shape::Cuboid { .. });
    let rot = DVec2::from_angle(yaw);
    let mut h = floor;
    for i in 0..SUPPORT_GRID {
        for j in 0..SUPPORT_GRID {
            let u = 2.0 * i as f64 / (SUPPORT_GRID - 1) as f64 - 1.0;
            let v = 2.0 * j as f64 / (SUPPORT_GRID - 1) as f64 - 1.0;
            if round && u * u + v * v > 1.0 {
                continue;
            }
            let p = xy + rot.rotate(DVec2::new(u * fx, v * fy));
            h = h.max(height_at(env.world(), p, floor));
        }
    }
    h
}

/// Random rejection sampling: uniform position and yaw over the region,
/// dropped onto the highest surface under the footprint.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomRejectionSampling;

impl PlacementPolicy for RandomRejectionSampling {
    fn propose(&mut self, env: &GeneratorEnv, _obs: &[f64], rng: &mut dyn RngCore) -> Result<Proposal> {
        let object = env.current_object().ok_or(Error::EpisodeDone)?;
        let region = env.region();
        let local = DVec2::new(
            rng.random_range(-1.0..=1.0) * region.half_extents[0],
            rng.random_range(-1.0..=1.0) * region.half_extents[1],
        );
        let xy = region.to_world_xy(local);
        let yaw = region.yaw + rng.random_range(-PI..=PI);
        let z = support_height(env, object, xy, yaw) + object.shape.bottom_offset() + env.config().drop_epsilon;
        let pose = WorldPose {
            position: DVec3::new(xy.x, xy.y, z),
            yaw,
        };
        let mut at_rest = pose;
        at_rest.position.z -= env.config().drop_epsilon;
        Ok(Proposal::Pose(pose, region.world_pose_to_action(&at_rest, object)))
    }
}

/// RRS episode with the same attempt budget and stability criterion as
/// learned policies.
pub fn rrs_episode(env: &mut GeneratorEnv, rng: &mut dyn RngCore) -> Result<EpisodeRecord> {
    rollout_episode(&mut RandomRejectionSampling, env, None, rng)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: v.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    /// Over all attempts: `stable_step` when stable, the settle budget otherwise.
    pub stable_steps: MeanStd,
    /// `histogram[i]` counts objects that used `i + 1` attempts.
    pub attempt_histogram: Vec<usize>,
    pub wall_seconds: f64,
    pub seconds_per_episode: f64,
}

impl EvalReport {
    pub fn from_records(records: &[EpisodeRecord], max_attempts: usize, wall_seconds: f64) -> Self {
        let episodes = records.len();
        let successes = records.iter().filter(|r| r.success).count();
        let mut histogram = vec![0; max_attempts];
        for r in records {
            for n in r.attempts_per_object() {
                if n >= 1 && n <= max_attempts {
                    histogram[n - 1] += 1;
                }
            }
        }
        Self {
            episodes,
            success_rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
            stable_steps: MeanStd::of(records.iter().flat_map(|r| r.attempts.iter().map(|a| a.stable_steps as f64))),
            attempt_histogram: histogram,
            wall_seconds,
            seconds_per_episode: if episodes == 0 { 0.0 } else { wall_seconds / episodes as f64 },
        }
    }

    pub fn to_csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{:.6},{:.3},{:.3},{:.4}",
            self.episodes, self.success_rate, self.stable_steps.mean, self.stable_steps.std, self.seconds_per_episode
        )
    }

    pub const CSV_HEADER: &'static str = "label,episodes,success_rate,stable_steps_mean,stable_steps_std,seconds_per_episode";
}

/// Which policy drives an evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Evaluated<'a> {
    Rrs,
    Network(&'a ActorCritic, ActionMode),
}

/// Seed of episode `i` of an evaluation seeded with `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// Runs `episodes` episodes, each with its own seeded RNG, spread over
/// `jobs` threads. Results do not depend on `jobs`.
pub fn run_episodes(
    env: &GeneratorEnv,
    policy: Evaluated<'_>,
    change: Option<&RegionChange>,
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<EpisodeRecord>> {
    let jobs = jobs.clamp(1, episodes.max(1));
    let run_range = |range: std::ops::Range<usize>| -> Result<Vec<EpisodeRecord>> {
        let mut env = env.clone();
        range
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
                match policy {
                    Evaluated::Rrs => rollout_episode(&mut RandomRejectionSampling, &mut env, change, &mut rng),
                    Evaluated::Network(net, mode) => {
                        rollout_episode(&mut NetworkPolicy { net, mode }, &mut env, change, &mut rng)
                    }
                }
            })
            .collect()
    };
    if jobs == 1 {
        return run_range(0..episodes);
    }
    let chunk = episodes.div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let range = (j * chunk).min(episodes)..((j + 1) * chunk).min(episodes);
                s.spawn(move || run_range(range))
            })
            .collect();
        let mut out = Vec::with_capacity(episodes);
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate(
    env: &GeneratorEnv,
    policy: Evaluated<'_>,
    change: Option<&RegionChange>,
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<(EvalReport, Vec<EpisodeRecord>)> {
    let start = Instant::now();
    let records = run_episodes(env, policy, change, episodes, seed, jobs)?;
    let report = EvalReport::from_records(&records, env.config().max_attempts, start.elapsed().as_secs_f64());
    Ok((report, records))
}

/// Region-frame placement positions of successful placements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityMap {
    /// Per queried object, region-frame `(x, y)` of successful placements.
    pub points: Vec<Vec<[f64; 2]>>,
    /// Per object: `[min_x, min_y, max_x, max_y]` of its points.
    pub boxes: Vec<Option<[f64; 4]>>,
    /// Per object: box area over region footprint area, in `[0, 1]`.
    pub coverage: Vec<f64>,
    /// Mean of `coverage` over objects with at least one point.
    pub mean_coverage: f64,
}

impl DiversityMap {
    pub fn from_points(points: Vec<Vec<[f64; 2]>>, region: &QueriedRegion) -> Self {
        let [hx, hy, _] = region.half_extents;
        let mut boxes = Vec::new();
        let mut coverage = Vec::new();
        for pts in &points {
            if pts.is_empty() {
                boxes.push(None);
                coverage.push(0.0);
                continue;
            }
            let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in pts {
                b[0] = b[0].min(p[0].clamp(-hx, hx));
                b[1] = b[1].min(p[1].clamp(-hy, hy));
                b[2] = b[2].max(p[0].clamp(-hx, hx));
                b[3] = b[3].max(p[1].clamp(-hy, hy));
            }
            boxes.push(Some(b));
            coverage.push(((b[2] - b[0]) * (b[3] - b[1]) / region.footprint_area()).clamp(0.0, 1.0));
        }
        let covered: Vec<f64> = coverage.iter().zip(&boxes).filter(|(_, b)| b.is_some()).map(|(c, _)| *c).collect();
        let mean_coverage = if covered.is_empty() { 0.0 } else { covered.iter().sum::<f64>() / covered.len() as f64 };
        Self {
            points,
            boxes,
            coverage,
            mean_coverage,
        }
    }

    pub fn from_records(records: &[EpisodeRecord], region: &QueriedRegion, n_objects: usize) -> Self {
        let mut points = vec![Vec::new(); n_objects];
        for r in records {
            for (i, p) in r.placements.iter().enumerate().take(n_objects) {
                let local = region.to_local_xy(DVec2::new(p.position[0], p.position[1]));
                points[i].push([local.x, local.y]);
            }
        }
        Self::from_points(points, region)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("object,x,y\n");
        for (i, pts) in self.points.iter().enumerate() {
            for p in pts {
                out.push_str(&format!("{i},{},{}\n", p[0], p[1]));
            }
        }
        out
    }

    /// Grayscale scatter plot as a binary PGM image.
    pub fn to_pgm(&self, region: &QueriedRegion, size: usize) -> Vec<u8> {
        let mut pixels = vec![255u8; size * size];
        let [hx, hy, _] = region.half_extents;
        for pts in &self.points {
            for p in pts {
                let ix = (((p[0] / hx + 1.0) * 0.5) * (size - 1) as f64).round() as usize;
                let iy = (((1.0 - p[1] / hy) * 0.5) * (size - 1) as f64).round() as usize;
                if ix < size && iy < size {
                    pixels[iy * size + ix] = 0;
                }
            }
        }
        let mut out = format!("P5\n{size} {size}\n255\n").into_bytes();
        out.extend(pixels);
        out
    }
}

pub fn diversity_map(
    env: &GeneratorEnv,
    policy: Evaluated<'_>,
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<(DiversityMap, EvalReport)> {
    let (report, records) = evaluate(env, policy, None, episodes, seed, jobs)?;
    let map = DiversityMap::from_records(&records, env.region(), env.spec().query_order.len());
    Ok((map, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub change: ChangeKind,
    pub report: EvalReport,
}

/// Success under each region change; the environment should use the
/// enlarged table.
pub fn generalization_eval(
    env: &GeneratorEnv,
    policy: Evaluated<'_>,
    changes: &[ChangeKind],
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<GeneralizationRow>> {
    changes
        .iter()
        .map(|kind| {
            let change = RegionChange::new(*kind);
            let (report, _) = evaluate(env, policy, Some(&change), episodes, seed, jobs)?;
            Ok(GeneralizationRow { change: *kind, report })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub max_attempts: usize,
    pub report: EvalReport,
}

/// Success rate as a function of the per-object attempt budget. The
/// observation layout stays that of `obs_config`; budgets beyond its slot
/// count keep only the latest attempts in the history.
pub fn attempts_study(
    spec: &SceneSpec,
    config: &GeneratorConfig,
    obs_config: &ObservationConfig,
    policy: Evaluated<'_>,
    budgets: &[usize],
    episodes: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<BudgetRow>> {
    budgets
        .iter()
        .map(|&b| {
            if b == 0 {
                return Err(Error::InvalidConfig("attempt budget must be at least 1".into()));
            }
            let cfg = GeneratorConfig { max_attempts: b, ..*config };
            let env = GeneratorEnv::new(spec.clone(), cfg, *obs_config)?;
            let (report, _) = evaluate(&env, policy, None, episodes, seed, jobs)?;
            Ok(BudgetRow { max_attempts: b, report })
        })
        .collect()
}

/// Policy configurations compared against each other.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    OpenLoop,
    ShortMemory,
    TruncNormal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::OpenLoop, Variant::ShortMemory, Variant::TruncNormal];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::OpenLoop => "ol",
            Variant::ShortMemory => "sm",
            Variant::TruncNormal => "normal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "ol" | "open_loop" => Ok(Variant::OpenLoop),
            "sm" | "short_memory" => Ok(Variant::ShortMemory),
            "normal" | "trunc_normal" => Ok(Variant::TruncNormal),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}` (full, ol, sm, normal)"))),
        }
    }

    pub fn history(&self) -> HistoryMode {
        match self {
            Variant::OpenLoop => HistoryMode::OpenLoop,
            Variant::ShortMemory => HistoryMode::ShortMemory,
            Variant::Full | Variant::TruncNormal => HistoryMode::Full,
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            Variant::TruncNormal => HeadKind::TruncatedNormal,
            _ => HeadKind::Beta,
        }
    }

    /// Environment and training configuration of this variant.
    pub fn configure(&self, obs: &ObservationConfig, train: &TrainConfig) -> (ObservationConfig, TrainConfig) {
        let obs = ObservationConfig {
            history: self.history(),
            ..*obs
        };
        let train = TrainConfig {
            head: self.head(),
            ..train.clone()
        };
        (obs, train)
    }
}

pub struct AblationResult {
    pub variant: Variant,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains `variant` and evaluates it with sampled actions under the same
/// seeds and budget as every other variant.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    spec: &SceneSpec,
    config: &GeneratorConfig,
    obs: &ObservationConfig,
    train_cfg: &TrainConfig,
    variant: Variant,
    seed: u64,
    eval_episodes: usize,
    jobs: usize,
) -> Result<AblationResult> {
    let (obs, train_cfg) = variant.configure(obs, train_cfg);
    let train_env = GeneratorEnv::new(spec.clone(), *config, obs)?;
    let outcome = train(&train_env, &train_cfg, seed, jobs, |_, _| Ok(()))?;
    let eval_env = GeneratorEnv::new(
        spec.clone(),
        GeneratorConfig {
            stop_when_decided: true,
            ..*config
        },
        obs,
    )?;
    let (report, _) = evaluate(
        &eval_env,
        Evaluated::Network(&outcome.checkpoint.policy, ActionMode::Sample),
        None,
        eval_episodes,
        seed.wrapping_add(EVAL_SEED_OFFSET),
        jobs,
    )?;
    Ok(AblationResult { variant, outcome, report })
}

/// Offset separating evaluation seeds from training seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Mean stable steps per attempt index, over objects that needed at least
/// `min_attempts` attempts.
pub fn stable_steps_vs_attempt(records: &[EpisodeRecord], min_attempts: usize, max_attempts: usize) -> Vec<MeanStd> {
    let mut buckets = vec![Vec::new(); max_attempts];
    for r in records {
        let counts = r.attempts_per_object();
        for a in &r.attempts {
            if counts[a.object] >= min_attempts && a.attempt <= max_attempts {
                buckets[a.attempt - 1].push(a.stable_steps as f64);
            }
        }
    }
    buckets.into_iter().map(MeanStd::of).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectSpec, TableSpec};

    fn single_small_object_env() -> GeneratorEnv {
        let table = TableSpec::enlarged();
        let catalog = vec![ObjectSpec {
            id: "small".into(),
            shape: Shape::cuboid(0.03, 0.03, 0.02),
            mass: 0.2,
            friction: 0.6,
            color: String::new(),
        }];
        let spec = SceneSpec {
            table,
            region: QueriedRegion::centered(&table, 0.5, 0.5, 0.15),
            query_order: vec!["small".into()],
            catalog,
        };
        let cfg = GeneratorConfig {
            stop_when_decided: true,
            ..Default::default()
        };
        GeneratorEnv::new(spec, cfg, ObservationConfig { resolution: 4, ..Default::default() }).unwrap()
    }

    #[test]
    fn rrs_single_object_always_succeeds() {
        let env = single_small_object_env();
        let (report, _) = evaluate(&env, Evaluated::Rrs, None, 50, 3, 1).unwrap();
        assert_eq!(report.success_rate, 1.0);
    }

    #[test]
    fn evaluation_independent_of_jobs() {
        let env = single_small_object_env();
        let a = run_episodes(&env, Evaluated::Rrs, None, 6, 9, 1).unwrap();
        let b = run_episodes(&env, Evaluated::Rrs, None, 6, 9, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coverage_of_single_point_is_zero() {
        let table = TableSpec::standard();
        let region = QueriedRegion::covering(&table, 0.15);
        let map = DiversityMap::from_points(vec![vec![[0.1, 0.1]; 20]], &region);
        assert_eq!(map.mean_coverage, 0.0);
    }

    #[test]
    fn uniform_points_cover_region() {
        let table = TableSpec::standard();
        let region = QueriedRegion::covering(&table, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut last = 0.0;
        for m in [10, 100, 1000, 10_000] {
            let pts = (0..m)
                .map(|_| [rng.random_range(-0.3..0.3), rng.random_range(-0.35..0.35)])
                .collect();
            let cov = DiversityMap::from_points(vec![pts], &region).mean_coverage;
            assert!(cov >= last - 0.05);
            last = cov;
        }
        assert!(last > 0.99);
    }

    #[test]
    fn zero_budget_rejected() {
        let env = single_small_object_env();
        let err = attempts_study(env.spec(), env.config(), env.obs_config(), Evaluated::Rrs, &[0], 1, 0, 1);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
