//! Finite-difference audit of the trainer's analytic gradients.
//!
//! Perturbs every parameter of freshly-initialized actor/critic nets by
//! +/-h, recomputes the exact losses the update step descends, and compares
//! the central difference against the backward pass. Sample ratios are kept
//! away from the clip kinks so the objective is differentiable at every
//! probed point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ppo::net::{log_softmax, Mlp};
use crate::ppo::update::{actor_loss_and_grads, critic_loss_and_grads, ActorBatch, CriticBatch};

/// Central-difference step. Small enough for O(h^2) truncation error to sit
/// well under the pass threshold, large enough to stay above f64 noise.
pub const FD_STEP: f64 = 1e-5;

/// Worst relative error across all parameters checked.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn random_obs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Checks every actor parameter on one random batch. `hidden` sets both
/// hidden-layer widths; the batch's importance ratios are sampled from
/// bands that exclude the clip boundaries 1 - clip and 1 + clip.
pub fn gradient_check_actor(
    n_obs: usize,
    hidden: usize,
    n_actions: usize,
    batch_size: usize,
    clip: f64,
    entropy_coeff: f64,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = Mlp::new(&[n_obs, hidden, hidden, n_actions], 0.5, &mut rng);
    let obs: Vec<Vec<f64>> = (0..batch_size).map(|_| random_obs(n_obs, &mut rng)).collect();
    let actions: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..n_actions)).collect();
    let advantages: Vec<f64> = (0..batch_size).map(|_| rng.sample(StandardNormal)).collect();
    // Importance ratios distant from both clip kinks: inside the clip band,
    // clearly below it, or clearly above it. A +/-h parameter nudge moves a
    // ratio by O(h), far less than the 0.05 margin to the nearest kink.
    let log_prob_old: Vec<f64> = obs
        .iter()
        .zip(&actions)
        .map(|(o, &a)| {
            let ratio = match rng.gen_range(0..3u8) {
                0 => rng.gen_range(0.3..(1.0 - clip - 0.05)),
                1 => rng.gen_range((1.0 - clip + 0.05)..(1.0 + clip - 0.05)),
                _ => rng.gen_range((1.0 + clip + 0.05)..2.0),
            };
            log_softmax(&actor.forward(o))[a] - ratio.ln()
        })
        .collect();
    let batch = ActorBatch {
        obs: &obs,
        actions: &actions,
        log_prob_old: &log_prob_old,
        advantages: &advantages,
    };
    let analytic = actor_loss_and_grads(&actor, &batch, clip, entropy_coeff).grads;
    let mut max_err: f64 = 0.0;
    let count = actor.param_count();
    for idx in 0..count {
        let original = actor.get_param(idx);
        actor.set_param(idx, original + FD_STEP);
        let up = actor_loss_and_grads(&actor, &batch, clip, entropy_coeff).total_loss;
        actor.set_param(idx, original - FD_STEP);
        let down = actor_loss_and_grads(&actor, &batch, clip, entropy_coeff).total_loss;
        actor.set_param(idx, original);
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_err = max_err.max(relative_error(grad_at(&analytic.w, &analytic.b, &actor, idx), numeric));
    }
    GradCheckReport {
        max_relative_error: max_err,
        parameters_checked: count,
    }
}

/// Checks every critic parameter on one random batch of value targets.
pub fn gradient_check_critic(
    n_obs: usize,
    hidden: usize,
    batch_size: usize,
    value_coeff: f64,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut critic = Mlp::new(&[n_obs, hidden, hidden, 1], 1.0, &mut rng);
    let obs: Vec<Vec<f64>> = (0..batch_size).map(|_| random_obs(n_obs, &mut rng)).collect();
    let targets: Vec<f64> = (0..batch_size)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0)
        .collect();
    let batch = CriticBatch {
        obs: &obs,
        targets: &targets,
    };
    let analytic = critic_loss_and_grads(&critic, &batch, value_coeff).1;
    let mut max_err: f64 = 0.0;
    let count = critic.param_count();
    for idx in 0..count {
        let original = critic.get_param(idx);
        critic.set_param(idx, original + FD_STEP);
        let up = critic_loss_and_grads(&critic, &batch, value_coeff).0;
        critic.set_param(idx, original - FD_STEP);
        let down = critic_loss_and_grads(&critic, &batch, value_coeff).0;
        critic.set_param(idx, original);
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_err = max_err.max(relative_error(
            grad_at(&analytic.w, &analytic.b, &critic, idx),
            numeric,
        ));
    }
    GradCheckReport {
        max_relative_error: max_err,
        parameters_checked: count,
    }
}

/// Reads the gradient for flat parameter `idx` (weights-then-biases per
/// layer, the same order `Mlp::get_param` uses).
fn grad_at(w: &[Vec<f64>], b: &[Vec<f64>], net: &Mlp, mut idx: usize) -> f64 {
    for (l, layer) in net.layers.iter().enumerate() {
        if idx < layer.w.len() {
            return w[l][idx];
        }
        idx -= layer.w.len();
        if idx < layer.b.len() {
            return b[l][idx];
        }
        idx -= layer.b.len();
    }
    panic!("parameter index out of range");
}
