//! Sequential placement environment: up to `max_attempts` proposals per
//! object, each released into the simulator and judged for stability.

use glam::DVec3;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{
    assemble_with_heightmap, render_heightmap, AttemptHistory, Heightmap, Normalizer, ObservationConfig, Progress,
};
use crate::physics::{
    check_stability, settle, BodyId, BodyState, SettleOptions, StabilityReport, StabilityThresholds, Trajectory, World,
    CONTACT_TOLERANCE,
};
use crate::policy::{ActionDist, ActorCritic};
use crate::scene::{
    transform_region, ObjectSpec, PlacementRecord, QueriedRegion, RegionChange, SceneSpec, WorldPose,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub max_attempts: usize,
    pub settle_steps: usize,
    /// Motion penalty scale `c`.
    pub penalty_scale: f64,
    /// Per-object success reward `R₀` (scaled by the 1-based object index).
    pub success_reward: f64,
    /// Release gap above the computed pose (m).
    pub drop_epsilon: f64,
    /// Largest displacement of an already placed object tolerated while a
    /// new one settles (m).
    pub drift_tolerance: f64,
    /// End settling once instability is certain. Shortens reward sums, so
    /// meant for evaluation.
    pub stop_when_decided: bool,
    /// Shuffle the query order at every reset.
    pub shuffle_order: bool,
    pub thresholds: StabilityThresholds,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            settle_steps: 240,
            penalty_scale: 0.005,
            success_reward: 100.0,
            drop_epsilon: 0.002,
            drift_tolerance: 0.001,
            stop_when_decided: false,
            shuffle_order: false,
            thresholds: StabilityThresholds::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
        }
        let windows = self.thresholds.reach_window + self.thresholds.hold_window;
        if self.settle_steps < windows {
            return Err(Error::InvalidConfig(format!(
                "settle_steps {} shorter than reach + hold windows {windows}",
                self.settle_steps
            )));
        }
        Ok(())
    }

    /// `-c·(Σ‖v‖ + Σ‖a‖) + n·1[stable]·R₀`
    pub fn reward(&self, report: &StabilityReport, object_index: usize, stable: bool) -> f64 {
        let bonus = if stable { object_index as f64 * self.success_reward } else { 0.0 };
        -self.penalty_scale * (report.velocity_sum + report.acceleration_sum) + bonus
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub attempt_failed: bool,
    pub object_done: bool,
    pub episode_done: bool,
    pub episode_success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementOutcome {
    pub stable: bool,
    pub reward: f64,
    pub report: StabilityReport,
    pub trajectory: Trajectory,
    /// The proposal penetrated the scene and was lifted before release.
    pub overlap_rejected: bool,
    /// An already placed object moved during settling.
    pub disturbed: bool,
    pub release: WorldPose,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub reward: f64,
    /// Observation for the next decision; `None` once the episode is over.
    pub observation: Option<Vec<f64>>,
    pub flags: StepFlags,
    pub outcome: PlacementOutcome,
}

/// Per-attempt log entry of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub object: usize,
    /// 1-based.
    pub attempt: usize,
    pub stable: bool,
    pub overlap: bool,
    /// `stable_step` for stable attempts, `settle_steps` otherwise.
    pub stable_steps: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub spec: SceneSpec,
    pub placements: Vec<PlacementRecord>,
    pub success: bool,
    pub attempts: Vec<AttemptLog>,
}

impl EpisodeRecord {
    /// Attempts used per queried object (objects never reached are absent).
    pub fn attempts_per_object(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for a in &self.attempts {
            if a.object == out.len() {
                out.push(0);
            }
            out[a.object] += 1;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorEnv {
    config: GeneratorConfig,
    obs_config: ObservationConfig,
    spec: SceneSpec,
    normalizer: Normalizer,
    world: World,
    region: QueriedRegion,
    objects: Vec<ObjectSpec>,
    committed: Vec<BodyId>,
    placements: Vec<PlacementRecord>,
    attempts: Vec<AttemptLog>,
    current: usize,
    attempt: usize,
    history: AttemptHistory,
    done: bool,
    success: bool,
}

impl GeneratorEnv {
    pub fn new(spec: SceneSpec, config: GeneratorConfig, obs_config: ObservationConfig) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let (world, _) = spec.build_world()?;
        let objects = spec.queried_objects()?;
        Ok(Self {
            normalizer: Normalizer::for_table(&spec.table),
            region: spec.region,
            history: history_for(&obs_config, config.max_attempts),
            config,
            obs_config,
            spec,
            world,
            objects,
            committed: Vec::new(),
            placements: Vec::new(),
            attempts: Vec::new(),
            current: 0,
            attempt: 1,
            done: true,
            success: false,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn obs_config(&self) -> &ObservationConfig {
        &self.obs_config
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn region(&self) -> &QueriedRegion {
        &self.region
    }

    pub fn current_object(&self) -> Option<&ObjectSpec> {
        self.objects.get(self.current).filter(|_| !self.done)
    }

    pub fn placements(&self) -> &[PlacementRecord] {
        &self.placements
    }

    pub fn history(&self) -> &AttemptHistory {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn progress(&self) -> Progress {
        Progress {
            placed: self.current,
            total: self.objects.len(),
            attempt: self.attempt,
            max_attempts: self.config.max_attempts,
        }
    }

    /// Starts a new episode, optionally with a sampled change of the
    /// queried region.
    pub fn reset(&mut self, change: Option<&RegionChange>, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<f64>> {
        self.region = match change {
            Some(c) => transform_region(&self.spec.region, c, &self.spec.table, rng)?,
            None => self.spec.region,
        };
        self.world = self.spec.build_world()?.0;
        self.objects = self.spec.queried_objects()?;
        if self.config.shuffle_order {
            self.objects.shuffle(rng);
        }
        self.committed.clear();
        self.placements.clear();
        self.attempts.clear();
        self.history = history_for(&self.obs_config, self.config.max_attempts);
        self.current = 0;
        self.attempt = 1;
        self.done = self.objects.is_empty();
        self.success = self.done;
        self.observe()
    }

    pub fn heightmap(&self) -> Heightmap {
        render_heightmap(&self.world, &self.region, self.obs_config.resolution)
    }

    pub fn observe(&self) -> Result<Vec<f64>> {
        let object = self.objects.get(self.current.min(self.objects.len().saturating_sub(1))).ok_or(Error::EpisodeDone)?;
        assemble_with_heightmap(
            &self.obs_config,
            &self.normalizer,
            &self.heightmap(),
            &self.region,
            object,
            &self.history,
            self.progress(),
        )
    }

    /// Places the current object at the pose selected by `action`.
    pub fn step(&mut self, action: [f64; 4]) -> Result<StepResult> {
        let object = self.current_object().ok_or(Error::EpisodeDone)?;
        let mut pose = self.region.action_to_world_pose(action, object);
        pose.position.z += self.config.drop_epsilon;
        self.step_pose(pose, action)
    }

    /// Releases the current object at `pose` (already including any drop
    /// gap); `action` is recorded in the history and placement record.
    pub fn step_pose(&mut self, pose: WorldPose, action: [f64; 4]) -> Result<StepResult> {
        let object = self.current_object().ok_or(Error::EpisodeDone)?.clone();
        let object_index = self.current + 1;
        let snapshot = self.world.clone();
        let before: Vec<DVec3> = self.committed_positions()?;

        let mut release = pose;
        let mut body = object.body_at(release.position, release.yaw)?;
        let overlap = self.world.max_penetration(&body) > CONTACT_TOLERANCE;
        if overlap {
            release.position.z = self.lowest_free_height(&object, release)? + self.config.drop_epsilon;
            body = object.body_at(release.position, release.yaw)?;
        }
        let id = self.world.add_body(body);
        let opts = SettleOptions {
            max_steps: self.config.settle_steps,
            stop_on_stable: !overlap,
            stop_when_decided: self.config.stop_when_decided,
        };
        let trajectory = settle(&mut self.world, id, &opts, &self.config.thresholds)?;
        let report = check_stability(&trajectory, &self.config.thresholds);
        let disturbed = self.committed_moved(&before)?;
        let stable = report.stable && !overlap && !disturbed;
        let reward = self.config.reward(&report, object_index, stable);
        self.attempts.push(AttemptLog {
            object: self.current,
            attempt: self.attempt,
            stable,
            overlap,
            stable_steps: if stable { report.stable_step } else { self.config.settle_steps },
            reward,
        });

        let mut flags = StepFlags::default();
        if stable {
            let state = self.world.body(id)?.state;
            let q = state.orientation;
            let (_, _, yaw) = q.to_euler(glam::EulerRot::XYZ);
            self.placements.push(PlacementRecord {
                object_id: object.id.clone(),
                release_position: release.position.to_array(),
                release_yaw: release.yaw,
                position: state.position.to_array(),
                orientation: [q.x, q.y, q.z, q.w],
                yaw,
                action,
                attempts: self.attempt,
                stable_step: report.stable_step,
            });
            self.committed.push(id);
            self.history.clear();
            self.current += 1;
            self.attempt = 1;
            flags.object_done = true;
            if self.current == self.objects.len() {
                self.done = true;
                self.success = true;
                flags.episode_done = true;
                flags.episode_success = true;
            }
        } else {
            self.world = snapshot;
            flags.attempt_failed = true;
            self.history.push(action, &trajectory, &self.region)?;
            self.attempt += 1;
            if self.attempt > self.config.max_attempts {
                self.done = true;
                flags.object_done = true;
                flags.episode_done = true;
            }
        }
        let observation = if self.done { None } else { Some(self.observe()?) };
        Ok(StepResult {
            reward,
            observation,
            flags,
            outcome: PlacementOutcome {
                stable,
                reward,
                report,
                trajectory,
                overlap_rejected: overlap,
                disturbed,
                release,
            },
        })
    }

    pub fn record(&self) -> EpisodeRecord {
        let mut spec = self.spec.clone();
        spec.region = self.region;
        spec.query_order = self.objects.iter().map(|o| o.id.clone()).collect();
        EpisodeRecord {
            spec,
            placements: self.placements.clone(),
            success: self.success && self.done,
            attempts: self.attempts.clone(),
        }
    }

    fn committed_positions(&self) -> Result<Vec<DVec3>> {
        self.committed
            .iter()
            .map(|id| Ok(self.world.body(*id)?.state.position))
            .collect()
    }

    fn committed_moved(&self, before: &[DVec3]) -> Result<bool> {
        let th = &self.config.thresholds;
        for (id, p0) in self.committed.iter().zip(before) {
            let s = self.world.body(*id)?.state;
            if s.position.distance(*p0) > self.config.drift_tolerance
                || s.linear_velocity.length() >= th.lin_vel_max
                || s.angular_velocity.length() >= th.ang_vel_max
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Lowest center height at or above `pose` where the object no longer
    /// penetrates the scene.
    fn lowest_free_height(&self, object: &ObjectSpec, pose: WorldPose) -> Result<f64> {
        let penetrates = |z: f64| -> Result<bool> {
            let body = object.body_at(DVec3::new(pose.position.x, pose.position.y, z), pose.yaw)?;
            Ok(self.world.max_penetration(&body) > 0.0)
        };
        let mut lo = pose.position.z;
        let top = self
            .world
            .bodies()
            .iter()
            .filter(|b| !b.is_static())
            .map(|b| b.state.position.z + b.shape.bounding_radius())
            .fold(self.region.surface_z(), f64::max);
        let mut hi = top.max(lo) + object.shape.bounding_radius() + 1e-3;
        if penetrates(hi)? {
            return Err(Error::InvalidConfig("no free height above proposal".into()));
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if penetrates(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// History buffer for an attempt budget; budgets larger than the
/// observed slot count keep the most recent attempts.
fn history_for(obs: &ObservationConfig, budget: usize) -> AttemptHistory {
    if budget > obs.history_slots() {
        AttemptHistory::rolling(obs.history_slots())
    } else {
        obs.new_history()
    }
}

/// Anything that proposes placements for the environment's current object.
pub trait PlacementPolicy {
    /// Proposes the next placement. Implementations either return an action
    /// (mapped through the queried region) or a full world pose.
    fn propose(&mut self, env: &GeneratorEnv, observation: &[f64], rng: &mut dyn RngCore) -> Result<Proposal>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Proposal {
    Action([f64; 4]),
    /// Release pose (including the drop gap) and the action it corresponds to.
    Pose(WorldPose, [f64; 4]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Mode,
}

/// Trained actor used as a placement policy.
#[derive(Clone, Debug)]
pub struct NetworkPolicy<'a> {
    pub net: &'a ActorCritic,
    pub mode: ActionMode,
}

impl PlacementPolicy for NetworkPolicy<'_> {
    fn propose(&mut self, _env: &GeneratorEnv, observation: &[f64], rng: &mut dyn RngCore) -> Result<Proposal> {
        let dist: ActionDist = self.net.dist(observation)?;
        Ok(Proposal::Action(match self.mode {
            ActionMode::Sample => dist.sample(rng)?.action,
            ActionMode::Mode => dist.mode(),
        }))
    }
}

/// Runs one full episode.
pub fn rollout_episode(
    policy: &mut dyn PlacementPolicy,
    env: &mut GeneratorEnv,
    change: Option<&RegionChange>,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord> {
    let mut obs = env.reset(change, rng)?;
    while !env.is_done() {
        let step = match policy.propose(env, &obs, rng)? {
            Proposal::Action(a) => env.step(a)?,
            Proposal::Pose(pose, a) => env.step_pose(pose, a)?,
        };
        if let Some(next) = step.observation {
            obs = next;
        }
    }
    Ok(env.record())
}

/// Re-simulates a scene's placements from their release poses and checks
/// that each one settles stably at the recorded pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayVerdict {
    pub stable: Vec<bool>,
    /// Largest difference between recorded and re-simulated settled
    /// positions (m).
    pub max_position_error: f64,
    pub bit_exact: bool,
}

impl ReplayVerdict {
    pub fn passed(&self) -> bool {
        self.stable.iter().all(|s| *s)
    }
}

pub fn replay_scene(spec: &SceneSpec, placements: &[PlacementRecord], config: &GeneratorConfig) -> Result<ReplayVerdict> {
    let mut replayer = Replayer::new(spec, config)?;
    let mut stable = Vec::with_capacity(placements.len());
    let mut max_err: f64 = 0.0;
    let mut bit_exact = true;
    for rec in placements {
        let (ok, state) = replayer.place(rec)?;
        stable.push(ok);
        let q = state.orientation;
        max_err = max_err.max(state.position.distance(DVec3::from(rec.position)));
        bit_exact &= state.position.to_array() == rec.position && [q.x, q.y, q.z, q.w] == rec.orientation;
    }
    Ok(ReplayVerdict {
        stable,
        max_position_error: max_err,
        bit_exact,
    })
}

/// Rebuilds a scene placement by placement from recorded release poses.
#[derive(Clone, Debug)]
pub struct Replayer<'a> {
    spec: &'a SceneSpec,
    config: GeneratorConfig,
    world: World,
    committed: Vec<BodyId>,
}

impl<'a> Replayer<'a> {
    pub fn new(spec: &'a SceneSpec, config: &GeneratorConfig) -> Result<Self> {
        Ok(Self {
            spec,
            config: *config,
            world: spec.build_world()?.0,
            committed: Vec::new(),
        })
    }

    /// Scene with every placement so far committed.
    pub fn world(&self) -> &World {
        &self.world
    }

    /// Releases `rec`'s object from its recorded release pose and settles
    /// it. Returns whether it came to rest without disturbing the scene,
    /// and its final state. The body stays in the world either way.
    pub fn place(&mut self, rec: &PlacementRecord) -> Result<(bool, BodyState)> {
        let object = self.spec.object(&rec.object_id)?;
        self.release(object, DVec3::from(rec.release_position), rec.release_yaw)
    }

    pub fn release(&mut self, object: &ObjectSpec, position: DVec3, yaw: f64) -> Result<(bool, BodyState)> {
        let before: Vec<DVec3> = self
            .committed
            .iter()
            .map(|id| self.world.body(*id).map(|b| b.state.position))
            .collect::<Result<_>>()?;
        let id = self.world.add_body(object.body_at(position, yaw)?);
        let opts = SettleOptions {
            max_steps: self.config.settle_steps,
            stop_on_stable: true,
            stop_when_decided: self.config.stop_when_decided,
        };
        let traj = settle(&mut self.world, id, &opts, &self.config.thresholds)?;
        let report = check_stability(&traj, &self.config.thresholds);
        let drift_ok = self.committed.iter().zip(&before).all(|(cid, p0)| {
            self.world
                .body(*cid)
                .map(|b| b.state.position.distance(*p0) <= self.config.drift_tolerance)
                .unwrap_or(false)
        });
        self.committed.push(id);
        Ok((report.stable && drift_ok, self.world.body(id)?.state))
    }
}
