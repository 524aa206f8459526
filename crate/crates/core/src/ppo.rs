//! Proximal policy optimization: rollout collection, generalized advantage
//! estimation and the clipped-surrogate update.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::GeneratorEnv;
use crate::error::{Error, Result};
use crate::policy::{clip_global_norm, ActionDist, ActorCritic, Adam, Checkpoint, HeadKind, MlpCache, ACTION_DIM};
use crate::scene::RegionChange;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    /// Environment decisions per update.
    pub batch: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    /// Value loss coefficient `c1`.
    pub vf_coef: f64,
    /// Entropy bonus coefficient `c2`.
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Multiplies environment rewards before they enter the buffer.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 1000,
            epochs: 5,
            minibatches: 4,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            reward_scale: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.epochs == 0 || self.minibatches == 0 || self.minibatches > self.batch {
            return bad("batch, epochs and minibatches must be positive with minibatches <= batch");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.max_grad_norm > 0.0) || !(self.reward_scale > 0.0) {
            return bad("clip, max_grad_norm and reward_scale must be positive");
        }
        Ok(())
    }
}

/// `δ_t = r_t + γ V_{t+1} (1 − d_t) − V_t`, `Â_t = δ_t + γλ (1 − d_t) Â_{t+1}`,
/// `R̂_t = Â_t + V_t`, with `V_T = bootstrap`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(Error::LengthMismatch(format!(
            "rewards {}, values {}, dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Transitions of one update, stored column-wise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn push(&mut self, obs: &[f64], action: [f64; ACTION_DIM], log_prob: f64, value: f64, reward: f64, done: bool) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
        Ok(())
    }

    /// Appends `other` (a contiguous segment with its own advantages).
    pub fn extend(&mut self, other: RolloutBuffer) {
        self.observations.extend(other.observations);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.values.extend(other.values);
        self.rewards.extend(other.rewards);
        self.dones.extend(other.dones);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    /// Fills advantages and returns for a single contiguous segment.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Mean loss components over a set of transitions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `L^CLIP`, the clipped surrogate (to be maximized).
    pub surrogate: f64,
    /// `L^VF`, mean squared value error.
    pub value: f64,
    pub entropy: f64,
    /// `c1·L^VF − c2·H − L^CLIP`.
    pub total: f64,
    /// `mean((r − 1) − ln r)`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Averages over all minibatches of all epochs.
    pub mean: LossTerms,
    /// Statistics of the first minibatch, before any parameter change.
    pub first: LossTerms,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Advantages as used by the update (normalized when configured).
pub fn prepared_advantages(buffer: &RolloutBuffer, normalize: bool) -> Vec<f64> {
    let adv = &buffer.advantages;
    if !normalize || adv.len() < 2 {
        return adv.clone();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Loss over the transitions `idx` and, when `grads` is given, its
/// gradient accumulated into the actor and critic parameter gradients.
pub fn minibatch_loss(
    net: &ActorCritic,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<LossTerms> {
    let m = idx.len() as f64;
    let mut terms = LossTerms::default();
    let mut cache = MlpCache::default();
    for &i in idx {
        let obs = buffer.observation(i);
        let raw = net.actor.forward_cached(obs, &mut cache)?;
        let dist = ActionDist::from_raw(net.head, &raw)?;
        let logp = dist.log_prob(&buffer.actions[i])?;
        let entropy = dist.entropy()?;
        let log_ratio = logp - buffer.log_probs[i];
        let ratio = log_ratio.exp();
        let a = advantages[i];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let unclipped_active = ratio * a <= clipped * a;
        terms.surrogate += (ratio * a).min(clipped * a) / m;
        terms.entropy += entropy / m;
        terms.approx_kl += ((ratio - 1.0) - log_ratio) / m;
        terms.mean_ratio += ratio / m;
        if (ratio - 1.0).abs() > cfg.clip {
            terms.clip_fraction += 1.0 / m;
        }
        if let Some((ga, _)) = grads.as_mut() {
            // d(-min(rA, clip(r)A))/d logp = -A r where the unclipped term is active.
            let w_logp = if unclipped_active { -a * ratio / m } else { 0.0 };
            let g = dist.raw_gradient(&raw, &buffer.actions[i], w_logp, -cfg.ent_coef / m);
            net.actor.backward(&cache, &g, ga)?;
        }

        let v = net.critic.forward_cached(obs, &mut cache)?[0];
        let err = v - buffer.returns[i];
        terms.value += err * err / m;
        if let Some((_, gc)) = grads.as_mut() {
            net.critic.backward(&cache, &[cfg.vf_coef * 2.0 * err / m], gc)?;
        }
    }
    terms.total = cfg.vf_coef * terms.value - cfg.ent_coef * terms.entropy - terms.surrogate;
    if !terms.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("{terms:?}")));
    }
    Ok(terms)
}

/// Runs `epochs` passes of shuffled minibatches over `buffer`.
pub fn ppo_update(
    net: &mut ActorCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<LossReport> {
    if buffer.is_empty() || buffer.advantages.len() != buffer.len() {
        return Err(Error::LengthMismatch("buffer has no computed advantages".into()));
    }
    let advantages = prepared_advantages(buffer, cfg.normalize_advantages);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mb_size = buffer.len().div_ceil(cfg.minibatches.min(buffer.len()));
    let mut report = LossReport::default();
    let mut ga = vec![0.0; net.actor.num_params()];
    let mut gc = vec![0.0; net.critic.num_params()];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb_size) {
            ga.iter_mut().for_each(|g| *g = 0.0);
            gc.iter_mut().for_each(|g| *g = 0.0);
            let terms = minibatch_loss(net, buffer, &advantages, idx, cfg, Some((&mut ga, &mut gc)))?;
            let norm = clip_global_norm(&mut [&mut ga, &mut gc], cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss(format!("gradient norm {norm}")));
            }
            actor_opt.step(net.actor.params_mut(), &ga);
            critic_opt.step(net.critic.params_mut(), &gc);
            if report.minibatches == 0 {
                report.first = terms;
            }
            report.minibatches += 1;
            let k = report.minibatches as f64;
            let mean = &mut report.mean;
            let blend = |acc: &mut f64, x: f64| *acc += (x - *acc) / k;
            blend(&mut mean.surrogate, terms.surrogate);
            blend(&mut mean.value, terms.value);
            blend(&mut mean.entropy, terms.entropy);
            blend(&mut mean.total, terms.total);
            blend(&mut mean.approx_kl, terms.approx_kl);
            blend(&mut mean.clip_fraction, terms.clip_fraction);
            blend(&mut mean.mean_ratio, terms.mean_ratio);
            blend(&mut report.grad_norm, norm);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub total_steps: usize,
    /// Parallel environment instances; part of the experiment definition.
    pub num_envs: usize,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
    /// Region change applied at every reset during training.
    pub change: Option<RegionChange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            total_steps: 2_500_000,
            num_envs: 4,
            hidden: vec![256, 256],
            head: HeadKind::Beta,
            change: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.num_envs == 0 || self.ppo.batch % self.num_envs != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch {} must be a positive multiple of num_envs {}",
                self.ppo.batch, self.num_envs
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn updates(&self) -> usize {
        self.total_steps.div_ceil(self.ppo.batch).max(1)
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub step: usize,
    /// Success over episodes finished during this update's rollout (the
    /// previous value when none finished).
    pub success_rate: f64,
    pub episodes: usize,
    /// Mean undiscounted, unscaled episode return.
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub seconds: f64,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str =
        "update,step,success_rate,episodes,mean_reward,policy_loss,value_loss,entropy,clip_fraction,kl,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.8},{:.3}",
            self.update,
            self.step,
            self.success_rate,
            self.episodes,
            self.mean_reward,
            -self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            self.approx_kl,
            self.seconds
        )
    }
}

/// Environment instance together with its private RNG and episode state.
#[derive(Clone, Debug)]
struct Worker {
    env: GeneratorEnv,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    episode_return: f64,
}

#[derive(Default)]
struct SegmentStats {
    successes: usize,
    episodes: usize,
    returns: f64,
}

impl Worker {
    fn collect(&mut self, net: &ActorCritic, steps: usize, cfg: &TrainConfig) -> Result<(RolloutBuffer, SegmentStats)> {
        let mut buf = RolloutBuffer::new(self.obs.len());
        let mut stats = SegmentStats::default();
        for _ in 0..steps {
            let (sample, value) = net.act(&self.obs, &mut self.rng)?;
            let step = self.env.step(sample.action)?;
            self.episode_return += step.reward;
            let done = step.flags.episode_done;
            buf.push(&self.obs, sample.action, sample.log_prob, value, step.reward * cfg.ppo.reward_scale, done)?;
            if done {
                stats.episodes += 1;
                stats.successes += step.flags.episode_success as usize;
                stats.returns += self.episode_return;
                self.episode_return = 0.0;
                self.obs = self.env.reset(cfg.change.as_ref(), &mut self.rng)?;
            } else {
                self.obs = step.observation.ok_or(Error::EpisodeDone)?;
            }
        }
        let bootstrap = net.value(&self.obs)?;
        buf.finish(bootstrap, cfg.ppo.gamma, cfg.ppo.lambda)?;
        Ok((buf, stats))
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
}

/// Seed of environment worker `i` of a run seeded with `seed`.
pub fn worker_seed(seed: u64, i: usize) -> u64 {
    seed ^ (0xA076_1D64_78BD_642F_u64.wrapping_mul(i as u64 + 1))
}

/// Trains from scratch. `jobs` threads share the fixed set of `num_envs`
/// workers, so results do not depend on `jobs`. `on_update` sees every curve
/// row and the current checkpoint as they are produced.
pub fn train(
    template: &GeneratorEnv,
    cfg: &TrainConfig,
    seed: u64,
    jobs: usize,
    mut on_update: impl FnMut(&CurveRow, &Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let obs_config = *template.obs_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = ActorCritic::new(obs_config.dim(), &cfg.hidden, cfg.head, &mut rng)?;
    let mut ckpt = Checkpoint::new(obs_config, net);
    ckpt.actor_optimizer = Some(Adam::new(ckpt.policy.actor.num_params(), cfg.ppo.lr));
    ckpt.critic_optimizer = Some(Adam::new(ckpt.policy.critic.num_params(), cfg.ppo.lr));

    let mut workers = (0..cfg.num_envs)
        .map(|i| {
            let mut env = template.clone();
            let mut wrng = ChaCha8Rng::seed_from_u64(worker_seed(seed, i));
            let obs = env.reset(cfg.change.as_ref(), &mut wrng)?;
            Ok(Worker {
                env,
                rng: wrng,
                obs,
                episode_return: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_env = cfg.ppo.batch / cfg.num_envs;
    let jobs = jobs.clamp(1, cfg.num_envs);
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut last_success = 0.0;
    let mut last_reward = 0.0;
    for update in 0..cfg.updates() {
        let net = &ckpt.policy;
        let segments = collect_all(&mut workers, net, per_env, cfg, jobs)?;
        let mut buffer = RolloutBuffer::new(obs_config.dim());
        let mut stats = SegmentStats::default();
        for (seg, s) in segments {
            buffer.extend(seg);
            stats.episodes += s.episodes;
            stats.successes += s.successes;
            stats.returns += s.returns;
        }
        if stats.episodes > 0 {
            last_success = stats.successes as f64 / stats.episodes as f64;
            last_reward = stats.returns / stats.episodes as f64;
        }
        let (Some(actor_opt), Some(critic_opt)) = (ckpt.actor_optimizer.as_mut(), ckpt.critic_optimizer.as_mut()) else {
            unreachable!("optimizers are created above");
        };
        let report = ppo_update(&mut ckpt.policy, actor_opt, critic_opt, &buffer, &cfg.ppo, &mut rng)?;
        ckpt.updates += 1;
        let row = CurveRow {
            update: update + 1,
            step: (update + 1) * cfg.ppo.batch,
            success_rate: last_success,
            episodes: stats.episodes,
            mean_reward: last_reward,
            policy_loss: -report.mean.surrogate,
            value_loss: report.mean.value,
            entropy: report.mean.entropy,
            clip_fraction: report.mean.clip_fraction,
            approx_kl: report.mean.approx_kl,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_update(&row, &ckpt)?;
        curve.push(row);
    }
    Ok(TrainOutcome { checkpoint: ckpt, curve })
}

fn collect_all(
    workers: &mut [Worker],
    net: &ActorCritic,
    steps: usize,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<(RolloutBuffer, SegmentStats)>> {
    if jobs == 1 {
        return workers.iter_mut().map(|w| w.collect(net, steps, cfg)).collect();
    }
    let chunk = workers.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = workers
            .chunks_mut(chunk)
            .map(|group| s.spawn(move || group.iter_mut().map(|w| w.collect(net, steps, cfg)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("rollout worker panicked")?);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let value_after = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let live = if d[k] { 0.0 } else { 1.0 };
                    total += w * (r[k] + g * value_after(k) * live - v[k]);
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                total
            })
            .collect()
    }

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.5], &[true], 9.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![0.5]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let (a, _) = compute_gae(&r, &v, &[false, false, false], 2.0, 0.9, 0.0).unwrap();
        let expect = [1.0 + 0.9 * 0.1 - 0.3, -2.0 + 0.9 * -0.4 - 0.1, 0.5 + 0.9 * 2.0 + 0.4];
        for (x, y) in a.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
            let d: Vec<bool> = (0..20).map(|_| rng.random_bool(0.2)).collect();
            let boot = rng.random_range(-5.0..5.0);
            let (a, ret) = compute_gae(&r, &v, &d, boot, 0.99, 0.95).unwrap();
            let oracle = brute_force_gae(&r, &v, &d, boot, 0.99, 0.95);
            for t in 0..20 {
                assert!((a[t] - oracle[t]).abs() < 1e-10);
                assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(matches!(compute_gae(&[1.0], &[], &[true], 0.0, 0.9, 0.9), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig { minibatches: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let cfg = TrainConfig {
            num_envs: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
