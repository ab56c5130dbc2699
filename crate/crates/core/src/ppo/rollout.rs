//! On-policy experience collection and generalized advantage estimation.

use rand_chacha::ChaCha8Rng;

use crate::corpus::MAX_FREQUENCY;
use crate::env::Environment;
use crate::ppo::{PolicyParameters, PpoError};

/// One environment step as seen by the learner: the (normalized) observation
/// acted from, what the policy did, and what came back.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Totals for an episode that finished inside a rollout.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub discounted_reward: f64,
    pub length: u32,
}

/// A fixed-horizon slice of experience. Advantages/returns are empty until
/// `compute_advantages` fills them.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Critic value of the state after the final transition; zero if that
    /// transition ended its episode.
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: Vec<EpisodeStats>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn mean_step_reward(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.transitions.len() as f64
    }
}

/// Runs the policy for exactly `horizon` environment steps, resuming any
/// episode left open by the previous rollout and leaving the last one open
/// for the next. Actions are sampled from the current policy; `rng` is the
/// only randomness source beyond the environment's own seeded resets.
pub fn collect_rollout(
    env: &mut Environment,
    params: &PolicyParameters,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer, PpoError> {
    if horizon == 0 {
        return Err(PpoError::Config("rollout horizon must be at least 1".into()));
    }
    let mut transitions = Vec::with_capacity(horizon);
    let mut episodes = Vec::new();
    for _ in 0..horizon {
        if env.current_observation().is_none() || env.is_episode_complete() {
            env.reset()?;
        }
        let observation = observe(env);
        let dist = params.policy_distribution(&observation)?;
        let (action, log_prob) = sample_action(&dist, rng);
        let value = params.state_value(&observation)?;
        let step = env.step(action)?;
        if step.done {
            episodes.push(EpisodeStats {
                total_reward: env.total_episode_reward(),
                discounted_reward: env.total_discounted_episode_reward(),
                length: env.turns_completed(),
            });
        }
        transitions.push(Transition {
            observation,
            action,
            log_prob,
            reward: step.reward,
            value,
            done: step.done,
        });
    }
    let bootstrap_value = if transitions.last().map(|t| t.done).unwrap_or(true) {
        0.0
    } else {
        params.state_value(&observe(env))?
    };
    Ok(RolloutBuffer {
        transitions,
        bootstrap_value,
        advantages: Vec::new(),
        returns: Vec::new(),
        episodes,
    })
}

fn observe(env: &Environment) -> Vec<f64> {
    env.current_observation()
        .expect("environment has an active episode")
        .normalized(MAX_FREQUENCY as f64)
}

/// Draws an action index from a categorical distribution by walking the
/// cumulative mass; returns the index and the log of its probability.
pub fn sample_action(distribution: &[f64], rng: &mut ChaCha8Rng) -> (usize, f64) {
    debug_assert!(!distribution.is_empty());
    let u: f64 = rand::Rng::gen(rng);
    let mut acc = 0.0;
    for (i, &p) in distribution.iter().enumerate() {
        acc += p;
        if u < acc {
            return (i, p.ln());
        }
    }
    // Accumulated float error can leave acc fractionally below 1.
    let last = distribution.len() - 1;
    (last, distribution[last].ln())
}

/// Fills `advantages` and `returns` via GAE(gamma, lambda), sweeping the
/// buffer backwards. Episode boundaries (done flags) cut both the bootstrap
/// value and the advantage recursion; the value of the state after the final
/// transition enters through `bootstrap_value`.
pub fn compute_advantages(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let n = buffer.transitions.len();
    buffer.advantages = vec![0.0; n];
    buffer.returns = vec![0.0; n];
    let mut carried = 0.0;
    for t in (0..n).rev() {
        let tr = &buffer.transitions[t];
        let next_value = if t + 1 == n {
            buffer.bootstrap_value
        } else {
            buffer.transitions[t + 1].value
        };
        let not_done = if tr.done { 0.0 } else { 1.0 };
        let delta = tr.reward + gamma * next_value * not_done - tr.value;
        carried = delta + gamma * lambda * not_done * carried;
        buffer.advantages[t] = carried;
        buffer.returns[t] = carried + tr.value;
    }
}
