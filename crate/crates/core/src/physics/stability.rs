//! Settling runs and the velocity/acceleration stability criterion.
//!
//! A placement is stable when, starting no later than `reach_window` steps
//! after release, the queried object's linear and angular speed and
//! acceleration all stay below their thresholds for `hold_window`
//! consecutive steps.

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::body::BodyState;
use super::world::{BodyId, World};
use crate::error::Result;

/// One recorded simulation step of a body: position (3), orientation
/// quaternion `xyzw` (4), linear velocity (3), angular velocity (3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample(pub [f64; 13]);

impl TrajectorySample {
    pub fn from_state(s: &BodyState) -> Self {
        let q = s.orientation;
        let (p, v, w) = (s.position, s.linear_velocity, s.angular_velocity);
        Self([p.x, p.y, p.z, q.x, q.y, q.z, q.w, v.x, v.y, v.z, w.x, w.y, w.z])
    }

    pub fn position(&self) -> DVec3 {
        DVec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn orientation(&self) -> DQuat {
        DQuat::from_xyzw(self.0[3], self.0[4], self.0[5], self.0[6])
    }

    pub fn linear_velocity(&self) -> DVec3 {
        DVec3::new(self.0[7], self.0[8], self.0[9])
    }

    pub fn angular_velocity(&self) -> DVec3 {
        DVec3::new(self.0[10], self.0[11], self.0[12])
    }

    /// Linear ⊕ angular velocity.
    pub fn twist(&self) -> [f64; 6] {
        let mut t = [0.0; 6];
        t.copy_from_slice(&self.0[7..13]);
        t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityThresholds {
    /// m/s
    pub lin_vel_max: f64,
    /// m/s²
    pub lin_acc_max: f64,
    /// rad/s
    pub ang_vel_max: f64,
    /// rad/s²
    pub ang_acc_max: f64,
    pub reach_window: usize,
    pub hold_window: usize,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self {
            lin_vel_max: 0.005,
            lin_acc_max: 1.0,
            ang_vel_max: 0.5_f64.to_radians(),
            ang_acc_max: 180.0_f64.to_radians(),
            reach_window: 40,
            hold_window: 20,
        }
    }
}

impl StabilityThresholds {
    /// Samples needed before the verdict can no longer change.
    pub fn decision_horizon(&self) -> usize {
        self.reach_window + self.hold_window
    }

    fn accepts(&self, twist: &[f64; 6], acc: &[f64; 6]) -> bool {
        norm3(&twist[..3]) < self.lin_vel_max
            && norm3(&acc[..3]) < self.lin_acc_max
            && norm3(&twist[3..]) < self.ang_vel_max
            && norm3(&acc[3..]) < self.ang_acc_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// Step at which the hold window completes, or the trajectory length
    /// when unstable.
    pub stable_step: usize,
    /// Σ‖v_i‖₂ over the recorded twists (6-vectors).
    pub velocity_sum: f64,
    /// Σ‖a_i‖₂ over the recorded accelerations (6-vectors).
    pub acceleration_sum: f64,
}

#[inline]
fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
fn norm6(v: &[f64; 6]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn finite_difference(cur: &[f64; 6], prev: &[f64; 6], dt: f64) -> [f64; 6] {
    std::array::from_fn(|k| (cur[k] - prev[k]) / dt)
}

/// Per-step twist derivatives. The object is released from rest, so the
/// first sample differences against a zero twist.
pub fn accelerations(traj: &Trajectory) -> Vec<[f64; 6]> {
    let mut prev = [0.0; 6];
    traj.samples
        .iter()
        .map(|s| {
            let t = s.twist();
            let a = finite_difference(&t, &prev, traj.dt);
            prev = t;
            a
        })
        .collect()
}

/// Streaming evaluation of the stability criterion, one sample at a time.
#[derive(Clone, Debug)]
pub struct StabilityMonitor {
    thresholds: StabilityThresholds,
    dt: f64,
    prev_twist: [f64; 6],
    seen: usize,
    run: usize,
    stable_at: Option<usize>,
    velocity_sum: f64,
    acceleration_sum: f64,
}

impl StabilityMonitor {
    pub fn new(thresholds: StabilityThresholds, dt: f64) -> Self {
        Self {
            thresholds,
            dt,
            prev_twist: [0.0; 6],
            seen: 0,
            run: 0,
            stable_at: None,
            velocity_sum: 0.0,
            acceleration_sum: 0.0,
        }
    }

    pub fn push(&mut self, sample: &TrajectorySample) {
        let twist = sample.twist();
        let acc = finite_difference(&twist, &self.prev_twist, self.dt);
        self.prev_twist = twist;
        self.velocity_sum += norm6(&twist);
        self.acceleration_sum += norm6(&acc);
        self.seen += 1;

        if self.stable_at.is_some() {
            return;
        }
        if self.thresholds.accepts(&twist, &acc) {
            self.run += 1;
        } else {
            self.run = 0;
        }
        let hold = self.thresholds.hold_window;
        if self.run >= hold {
            // First completed window is also the earliest-starting one.
            let start = self.seen - hold;
            if start <= self.thresholds.reach_window {
                self.stable_at = Some(self.seen);
            }
        }
    }

    pub fn is_stable(&self) -> bool {
        self.stable_at.is_some()
    }

    /// True once further samples cannot change the verdict.
    pub fn is_decided(&self) -> bool {
        self.stable_at.is_some() || self.seen >= self.thresholds.decision_horizon()
    }

    pub fn report(&self) -> StabilityReport {
        StabilityReport {
            stable: self.stable_at.is_some(),
            stable_step: self.stable_at.unwrap_or(self.seen),
            velocity_sum: self.velocity_sum,
            acceleration_sum: self.acceleration_sum,
        }
    }
}

pub fn check_stability(traj: &Trajectory, thresholds: &StabilityThresholds) -> StabilityReport {
    let mut monitor = StabilityMonitor::new(*thresholds, traj.dt);
    for s in &traj.samples {
        monitor.push(s);
    }
    monitor.report()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettleOptions {
    pub max_steps: usize,
    /// Stop as soon as the body is judged stable.
    pub stop_on_stable: bool,
    /// Also stop once instability is certain (reward sums then cover fewer
    /// steps, so this is meant for evaluation only).
    pub stop_when_decided: bool,
}

impl SettleOptions {
    pub fn new(max_steps: usize) -> Self {
        Self {
            max_steps,
            stop_on_stable: true,
            stop_when_decided: false,
        }
    }

    pub fn full(max_steps: usize) -> Self {
        Self {
            max_steps,
            stop_on_stable: false,
            stop_when_decided: false,
        }
    }
}

/// Steps `world` up to `opts.max_steps` times, recording `body` after every
/// step.
pub fn settle(
    world: &mut World,
    body: BodyId,
    opts: &SettleOptions,
    thresholds: &StabilityThresholds,
) -> Result<Trajectory> {
    world.body(body)?;
    let mut traj = Trajectory::new(world.dt);
    traj.samples.reserve(opts.max_steps);
    let mut monitor = StabilityMonitor::new(*thresholds, world.dt);
    for _ in 0..opts.max_steps {
        world.step()?;
        let sample = TrajectorySample::from_state(&world.body(body)?.state);
        monitor.push(&sample);
        traj.samples.push(sample);
        if (opts.stop_on_stable && monitor.is_stable()) || (opts.stop_when_decided && monitor.is_decided()) {
            break;
        }
    }
    Ok(traj)
}
