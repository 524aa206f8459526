//! Actor-critic networks, action heads and optimizer.

pub mod dist;
pub mod mlp;
pub mod optim;
pub mod special;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dist::{ActionDist, ActionSample, HeadKind, ACTION_DIM, HEAD_WIDTH};
pub use mlp::{Mlp, MlpCache};
pub use optim::{clip_global_norm, Adam};

use crate::error::{Error, Result};
use crate::observation::ObservationConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Separate actor and critic networks of the same hidden architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub head: HeadKind,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, hidden: &[usize], head: HeadKind, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(HEAD_WIDTH);
        let actor = Mlp::random(&sizes, 0.01, rng)?;
        *sizes.last_mut().unwrap() = 1;
        let critic = Mlp::random(&sizes, 1.0, rng)?;
        Ok(Self { head, actor, critic })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn dist(&self, obs: &[f64]) -> Result<ActionDist> {
        ActionDist::from_raw(self.head, &self.actor.forward(obs)?)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(obs)?[0])
    }

    /// Samples an action and evaluates the critic.
    pub fn act(&self, obs: &[f64], rng: &mut (impl Rng + ?Sized)) -> Result<(ActionSample, f64)> {
        let sample = self.dist(obs)?.sample(rng)?;
        Ok((sample, self.value(obs)?))
    }
}

/// Serialized policy: networks, the observation layout they expect and
/// optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub observation: ObservationConfig,
    pub policy: ActorCritic,
    pub actor_optimizer: Option<Adam>,
    pub critic_optimizer: Option<Adam>,
    /// Training updates performed so far.
    pub updates: u64,
}

impl Checkpoint {
    pub fn new(observation: ObservationConfig, policy: ActorCritic) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            observation,
            policy,
            actor_optimizer: None,
            critic_optimizer: None,
            updates: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ckpt: Checkpoint = serde_path_to_error::deserialize(de).map_err(Error::parse)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if ckpt.policy.obs_dim() != ckpt.observation.dim() {
            return Err(Error::ShapeMismatch {
                expected: ckpt.observation.dim(),
                got: ckpt.policy.obs_dim(),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Checkpoint {
        let obs = ObservationConfig {
            resolution: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = ActorCritic::new(obs.dim(), &[8, 8], HeadKind::Beta, &mut rng).unwrap();
        let mut ck = Checkpoint::new(obs, policy);
        let mut opt = Adam::new(ck.policy.actor.num_params(), 1e-4);
        let mut params = ck.policy.actor.params().to_vec();
        let grads: Vec<f64> = (0..params.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        opt.step(&mut params, &grads);
        ck.actor_optimizer = Some(opt);
        ck
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let ck = small();
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn checkpoint_version_checked() {
        let text = small().to_json().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::SchemaVersion { found: 2, .. })));
    }

    #[test]
    fn critic_is_deterministic() {
        let ck = small();
        let obs = vec![0.1; ck.observation.dim()];
        assert_eq!(ck.policy.value(&obs).unwrap(), ck.policy.value(&obs).unwrap());
    }

    #[test]
    fn fresh_actor_is_broad() {
        let ck = small();
        let obs = vec![0.0; ck.observation.dim()];
        match ck.policy.dist(&obs).unwrap() {
            ActionDist::Beta { alpha, beta } => {
                for i in 0..ACTION_DIM {
                    assert!(alpha[i] > 1.0 && alpha[i] < 2.0 && beta[i] > 1.0 && beta[i] < 2.0);
                }
            }
            _ => unreachable!(),
        }
    }
}
