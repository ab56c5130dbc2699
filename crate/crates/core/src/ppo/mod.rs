//! Proximal policy optimization over the obfuscation environment.
//!
//! An actor network maps a normalized frequency vector to a categorical
//! distribution over the increase/decrease actions; a critic estimates state
//! value. Training alternates fixed-horizon rollouts with clipped-surrogate
//! updates. Everything is seeded and single-threaded per agent, so a full
//! training run is bit-reproducible.

mod gradcheck;
mod net;
mod rollout;
mod update;

pub use gradcheck::{gradient_check_actor, gradient_check_critic, GradCheckReport, FD_STEP};
pub use net::{log_softmax, softmax};
pub use rollout::{
    collect_rollout, compute_advantages, sample_action, EpisodeStats, RolloutBuffer, Transition,
};
pub use update::{ppo_update, UpdateDiagnostics};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError, ShapedHeader};
use crate::env::{EnvError, Environment};
use crate::metrics::TrainingMetricsRecord;
use crate::ppo::net::{Adam, DenseLayer, Mlp};
use rand::SeedableRng;

/// Default width of both hidden layers in the actor and critic.
pub const DEFAULT_HIDDEN: usize = 64;

const AGENT_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error("ppo config: {0}")]
    Config(String),
    #[error("observation has {got} features, policy expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("rollout buffer has no advantages; run compute_advantages first")]
    MissingAdvantages,
    #[error("non-finite loss (actor {actor}, critic {critic}); try a lower learning rate")]
    NonFiniteLoss { actor: f64, critic: f64 },
    #[error("network parameters went non-finite during the update")]
    NonFiniteParameters,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Hyperparameters for rollout collection and the update step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Surrogate clip width epsilon; ratios are clamped to [1-eps, 1+eps].
    pub clip: f64,
    /// Discount used for advantage estimation (the learner's gamma; the
    /// environment's own gamma only feeds its bookkeeping totals).
    pub gamma: f64,
    /// GAE smoothing factor lambda.
    pub gae_lambda: f64,
    /// Environment steps collected per update.
    pub rollout_horizon: usize,
    pub minibatch_size: usize,
    /// Full passes over the rollout per update.
    pub update_epochs: usize,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    /// Weight on the critic's squared error.
    pub value_coeff: f64,
    /// Seeds action sampling and minibatch shuffling during training.
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_horizon: 2048,
            minibatch_size: 256,
            update_epochs: 4,
            learning_rate: 3e-4,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let fail = |msg: &str| Err(PpoError::Config(msg.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return fail("gae_lambda must lie in (0, 1]");
        }
        if self.rollout_horizon == 0 {
            return fail("rollout_horizon must be at least 1");
        }
        if self.minibatch_size == 0 {
            return fail("minibatch_size must be at least 1");
        }
        if self.update_epochs == 0 {
            return fail("update_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return fail("entropy_coeff must be non-negative");
        }
        if !(self.value_coeff > 0.0 && self.value_coeff.is_finite()) {
            return fail("value_coeff must be positive");
        }
        Ok(())
    }
}

/// Actor and critic networks plus their optimizer state. The pair is the
/// unit of checkpointing: reloading reproduces both action distributions and
/// the exact optimizer trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub(crate) actor: Mlp,
    pub(crate) critic: Mlp,
    pub(crate) actor_opt: Adam,
    pub(crate) critic_opt: Adam,
    /// Completed `ppo_update` calls.
    pub update_count: u64,
}

impl PolicyParameters {
    /// Fresh nets with two hidden layers of [`DEFAULT_HIDDEN`] units.
    pub fn new(observation_size: usize, action_count: usize, seed: u64) -> Self {
        Self::with_hidden(observation_size, action_count, DEFAULT_HIDDEN, seed)
    }

    /// Fresh nets with two hidden layers of `hidden` units each. The actor
    /// head starts near zero (gain 0.01) so the initial policy is close to
    /// uniform; the critic head keeps unit gain.
    pub fn with_hidden(
        observation_size: usize,
        action_count: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        assert!(observation_size > 0 && action_count > 0 && hidden > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new(&[observation_size, hidden, hidden, action_count], 0.01, &mut rng);
        let critic = Mlp::new(&[observation_size, hidden, hidden, 1], 1.0, &mut rng);
        let actor_opt = Adam::new(actor.param_count());
        let critic_opt = Adam::new(critic.param_count());
        PolicyParameters {
            actor,
            critic,
            actor_opt,
            critic_opt,
            update_count: 0,
        }
    }

    pub fn observation_size(&self) -> usize {
        self.actor.input_size()
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_size()
    }

    /// Hidden-layer widths shared by actor and critic.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        let sizes = self.actor.sizes();
        sizes[1..sizes.len() - 1].to_vec()
    }

    /// Softmax action distribution for a normalized observation.
    pub fn policy_distribution(&self, observation: &[f64]) -> Result<Vec<f64>, PpoError> {
        self.check_dims(observation)?;
        Ok(softmax(&self.actor.forward(observation)))
    }

    /// Critic's value estimate for a normalized observation.
    pub fn state_value(&self, observation: &[f64]) -> Result<f64, PpoError> {
        self.check_dims(observation)?;
        Ok(self.critic.forward(observation)[0])
    }

    fn check_dims(&self, observation: &[f64]) -> Result<(), PpoError> {
        if observation.len() != self.observation_size() {
            return Err(PpoError::DimensionMismatch {
                got: observation.len(),
                want: self.observation_size(),
            });
        }
        Ok(())
    }

    /// Serializes nets and optimizer moments to the binary checkpoint
    /// format (JSON header line + little-endian f64 arrays).
    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        let mut arrays: Vec<&[f64]> = Vec::new();
        for net in [&self.actor, &self.critic] {
            for layer in &net.layers {
                shapes.push(vec![layer.outputs, layer.inputs]);
                arrays.push(&layer.w);
                shapes.push(vec![layer.outputs]);
                arrays.push(&layer.b);
            }
        }
        for opt in [&self.actor_opt, &self.critic_opt] {
            shapes.push(vec![opt.m.len()]);
            arrays.push(&opt.m);
            shapes.push(vec![opt.v.len()]);
            arrays.push(&opt.v);
        }
        let header = AgentHeader {
            version: AGENT_CHECKPOINT_VERSION,
            observation_size: self.observation_size(),
            action_count: self.action_count(),
            hidden: self.hidden_sizes(),
            update_count: self.update_count,
            actor_steps: self.actor_opt.t,
            critic_steps: self.critic_opt.t,
            shapes,
        };
        checkpoint::write_file(path, &header, &arrays)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let (header, arrays) = checkpoint::read_file::<AgentHeader>(path)?;
        if header.version != AGENT_CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: header.version,
                expected: AGENT_CHECKPOINT_VERSION,
            }
            .into());
        }
        let mut actor_sizes = vec![header.observation_size];
        actor_sizes.extend_from_slice(&header.hidden);
        actor_sizes.push(header.action_count);
        let mut critic_sizes = vec![header.observation_size];
        critic_sizes.extend_from_slice(&header.hidden);
        critic_sizes.push(1);
        let mut cursor = arrays.into_iter();
        let mut build = |sizes: &[usize]| -> Result<Mlp, CheckpointError> {
            let mut layers = Vec::with_capacity(sizes.len() - 1);
            for pair in sizes.windows(2) {
                let (inputs, outputs) = (pair[0], pair[1]);
                let w = cursor.next().ok_or(CheckpointError::ArrayCount {
                    got: 0,
                    want: 2 * (sizes.len() - 1),
                })?;
                let b = cursor.next().ok_or(CheckpointError::ArrayCount {
                    got: 0,
                    want: 2 * (sizes.len() - 1),
                })?;
                if w.len() != inputs * outputs || b.len() != outputs {
                    return Err(CheckpointError::Header(
                        "layer shape disagrees with declared sizes".into(),
                    ));
                }
                layers.push(DenseLayer {
                    w,
                    b,
                    inputs,
                    outputs,
                });
            }
            Ok(Mlp { layers })
        };
        let actor = build(&actor_sizes)?;
        let critic = build(&critic_sizes)?;
        let mut moments = || -> Result<(Vec<f64>, Vec<f64>), CheckpointError> {
            let m = cursor
                .next()
                .ok_or(CheckpointError::Header("missing optimizer moments".into()))?;
            let v = cursor
                .next()
                .ok_or(CheckpointError::Header("missing optimizer moments".into()))?;
            Ok((m, v))
        };
        let (am, av) = moments()?;
        let (cm, cv) = moments()?;
        if am.len() != actor.param_count() || cm.len() != critic.param_count() {
            return Err(CheckpointError::Header(
                "optimizer moment length disagrees with network size".into(),
            )
            .into());
        }
        Ok(PolicyParameters {
            actor_opt: Adam {
                m: am,
                v: av,
                t: header.actor_steps,
            },
            critic_opt: Adam {
                m: cm,
                v: cv,
                t: header.critic_steps,
            },
            actor,
            critic,
            update_count: header.update_count,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentHeader {
    version: u32,
    observation_size: usize,
    action_count: usize,
    hidden: Vec<usize>,
    update_count: u64,
    actor_steps: u64,
    critic_steps: u64,
    shapes: Vec<Vec<usize>>,
}

impl ShapedHeader for AgentHeader {
    fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

/// Trains until at least `total_env_steps` environment steps have been
/// consumed (rounded up to whole rollouts), returning one metrics record per
/// update. The environment keeps its episode state across rollouts; training
/// randomness comes solely from `config.seed`.
pub fn train_agent(
    params: &mut PolicyParameters,
    env: &mut Environment,
    config: &PpoConfig,
    total_env_steps: u64,
) -> Result<Vec<TrainingMetricsRecord>, PpoError> {
    config.validate()?;
    if env.config().vocab_cardinality != params.observation_size() {
        return Err(PpoError::DimensionMismatch {
            got: env.config().vocab_cardinality,
            want: params.observation_size(),
        });
    }
    if env.action_count() != params.action_count() {
        return Err(PpoError::Config(format!(
            "environment exposes {} actions but the policy outputs {}",
            env.action_count(),
            params.action_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut env_steps = 0u64;
    while env_steps < total_env_steps {
        let mut buffer = collect_rollout(env, params, config.rollout_horizon, &mut rng)?;
        compute_advantages(&mut buffer, config.gamma, config.gae_lambda);
        let diag = ppo_update(params, &buffer, config, &mut rng)?;
        env_steps += buffer.len() as u64;
        let n_ep = buffer.episodes.len();
        let ep_mean = |f: &dyn Fn(&EpisodeStats) -> f64| -> Option<f64> {
            if n_ep == 0 {
                None
            } else {
                Some(buffer.episodes.iter().map(|e| f(e)).sum::<f64>() / n_ep as f64)
            }
        };
        records.push(TrainingMetricsRecord {
            update: params.update_count,
            env_steps,
            mean_step_reward: buffer.mean_step_reward(),
            episodes_completed: n_ep as u64,
            mean_episode_reward: ep_mean(&|e| e.total_reward),
            mean_discounted_episode_reward: ep_mean(&|e| e.discounted_reward),
            mean_episode_length: ep_mean(&|e| e.length as f64),
            actor_loss: diag.actor_loss,
            critic_loss: diag.critic_loss,
            entropy: diag.entropy,
            clip_fraction: diag.clip_fraction,
        });
    }
    Ok(records)
}
