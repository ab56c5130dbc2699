//! The clipped-surrogate policy update and its loss/gradient kernels.
//!
//! The loss functions are factored out of the update loop so the
//! finite-difference harness can audit exactly the gradients the trainer
//! applies, not a parallel reimplementation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::ppo::net::{log_softmax, Mlp, MlpGrads};
use crate::ppo::rollout::RolloutBuffer;
use crate::ppo::{PolicyParameters, PpoConfig, PpoError};

/// Actor minibatch views; `advantages` are already normalized.
pub(crate) struct ActorBatch<'a> {
    pub obs: &'a [Vec<f64>],
    pub actions: &'a [usize],
    pub log_prob_old: &'a [f64],
    pub advantages: &'a [f64],
}

pub(crate) struct ActorEval {
    /// Mean of -min(ratio * adv, clip(ratio) * adv) over the batch.
    pub policy_loss: f64,
    /// Mean policy entropy (nats) over the batch.
    pub entropy: f64,
    /// Fraction of samples whose ratio left [1 - clip, 1 + clip].
    pub clip_fraction: f64,
    /// policy_loss - entropy_coeff * entropy; what the gradients descend.
    pub total_loss: f64,
    pub grads: MlpGrads,
}

/// Evaluates the clipped-surrogate actor objective and accumulates exact
/// gradients of `total_loss` with respect to every actor parameter.
///
/// The min() selects the unclipped branch on ties, so a freshly-synced
/// policy (ratio exactly 1) still receives the full policy gradient.
pub(crate) fn actor_loss_and_grads(
    actor: &Mlp,
    batch: &ActorBatch<'_>,
    clip: f64,
    entropy_coeff: f64,
) -> ActorEval {
    let n = batch.obs.len();
    assert!(n > 0, "empty actor batch");
    let mut grads = MlpGrads::zeros_like(actor);
    let mut policy_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut clipped = 0usize;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let trace = actor.forward_trace(&batch.obs[i]);
        let logits = trace.activations.last().unwrap();
        let log_probs = log_softmax(logits);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let action = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (log_probs[action] - batch.log_prob_old[i]).exp();
        let ratio_clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        if ratio < 1.0 - clip || ratio > 1.0 + clip {
            clipped += 1;
        }
        let unclipped_term = ratio * adv;
        let clipped_term = ratio_clipped * adv;
        policy_loss -= unclipped_term.min(clipped_term) * inv_n;
        let entropy: f64 = probs
            .iter()
            .zip(&log_probs)
            .map(|(p, lp)| if *p > 0.0 { -p * lp } else { 0.0 })
            .sum();
        entropy_sum += entropy;

        // d(total)/d(logit_k), per sample, pre-divided by the batch size.
        let mut grad_logits = vec![0.0; logits.len()];
        if unclipped_term <= clipped_term {
            // Unclipped branch active: d(-ratio*adv)/dz_k = -adv * ratio * (1[k=a] - p_k).
            for (k, g) in grad_logits.iter_mut().enumerate() {
                let indicator = if k == action { 1.0 } else { 0.0 };
                *g -= adv * ratio * (indicator - probs[k]);
            }
        }
        // Entropy bonus: dH/dz_k = -p_k (log p_k + H); loss carries -coeff * H.
        if entropy_coeff != 0.0 {
            for (k, g) in grad_logits.iter_mut().enumerate() {
                *g += entropy_coeff * probs[k] * (log_probs[k] + entropy);
            }
        }
        for g in &mut grad_logits {
            *g *= inv_n;
        }
        actor.backward_into(&trace, &grad_logits, &mut grads);
    }
    let entropy = entropy_sum * inv_n;
    ActorEval {
        policy_loss,
        entropy,
        clip_fraction: clipped as f64 / n as f64,
        total_loss: policy_loss - entropy_coeff * entropy,
        grads,
    }
}

/// Critic minibatch views; `targets` are the GAE returns.
pub(crate) struct CriticBatch<'a> {
    pub obs: &'a [Vec<f64>],
    pub targets: &'a [f64],
}

/// Value loss `value_coeff * mean((V(s) - target)^2)` and its gradients.
pub(crate) fn critic_loss_and_grads(
    critic: &Mlp,
    batch: &CriticBatch<'_>,
    value_coeff: f64,
) -> (f64, MlpGrads) {
    let n = batch.obs.len();
    assert!(n > 0, "empty critic batch");
    let mut grads = MlpGrads::zeros_like(critic);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let trace = critic.forward_trace(&batch.obs[i]);
        let value = trace.activations.last().unwrap()[0];
        let err = value - batch.targets[i];
        loss += value_coeff * err * err * inv_n;
        critic.backward_into(&trace, &[value_coeff * 2.0 * err * inv_n], &mut grads);
    }
    (loss, grads)
}

/// Aggregate diagnostics for one `ppo_update` call, averaged over every
/// minibatch evaluation (weighted by minibatch size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Runs `update_epochs` passes of shuffled minibatch gradient steps over the
/// buffer. Advantages are normalized per minibatch (mean 0, unit variance,
/// epsilon-guarded); a trailing partial minibatch is kept, not dropped.
/// Fails without touching the optimizer step if a loss goes non-finite.
pub fn ppo_update(
    params: &mut PolicyParameters,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics, PpoError> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(PpoError::Config("cannot update from an empty rollout".into()));
    }
    if buffer.advantages.len() != buffer.len() || buffer.returns.len() != buffer.len() {
        return Err(PpoError::MissingAdvantages);
    }
    let n = buffer.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut sum_actor = 0.0;
    let mut sum_critic = 0.0;
    let mut sum_entropy = 0.0;
    let mut sum_clip = 0.0;
    let mut samples_seen = 0usize;
    let mut obs_buf: Vec<Vec<f64>> = Vec::with_capacity(config.minibatch_size);
    let mut act_buf: Vec<usize> = Vec::with_capacity(config.minibatch_size);
    let mut lp_buf: Vec<f64> = Vec::with_capacity(config.minibatch_size);
    let mut adv_buf: Vec<f64> = Vec::with_capacity(config.minibatch_size);
    let mut ret_buf: Vec<f64> = Vec::with_capacity(config.minibatch_size);
    for _ in 0..config.update_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(config.minibatch_size) {
            obs_buf.clear();
            act_buf.clear();
            lp_buf.clear();
            adv_buf.clear();
            ret_buf.clear();
            for &i in chunk {
                let tr = &buffer.transitions[i];
                obs_buf.push(tr.observation.clone());
                act_buf.push(tr.action);
                lp_buf.push(tr.log_prob);
                adv_buf.push(buffer.advantages[i]);
                ret_buf.push(buffer.returns[i]);
            }
            normalize_in_place(&mut adv_buf);
            let actor_eval = actor_loss_and_grads(
                &params.actor,
                &ActorBatch {
                    obs: &obs_buf,
                    actions: &act_buf,
                    log_prob_old: &lp_buf,
                    advantages: &adv_buf,
                },
                config.clip,
                config.entropy_coeff,
            );
            let (critic_loss, critic_grads) = critic_loss_and_grads(
                &params.critic,
                &CriticBatch {
                    obs: &obs_buf,
                    targets: &ret_buf,
                },
                config.value_coeff,
            );
            if !actor_eval.total_loss.is_finite()
                || !critic_loss.is_finite()
                || !actor_eval.grads.is_finite()
                || !critic_grads.is_finite()
            {
                return Err(PpoError::NonFiniteLoss {
                    actor: actor_eval.total_loss,
                    critic: critic_loss,
                });
            }
            params
                .actor_opt
                .step(&mut params.actor, &actor_eval.grads, config.learning_rate);
            params
                .critic_opt
                .step(&mut params.critic, &critic_grads, config.learning_rate);
            let w = chunk.len() as f64;
            sum_actor += actor_eval.policy_loss * w;
            sum_critic += critic_loss * w;
            sum_entropy += actor_eval.entropy * w;
            sum_clip += actor_eval.clip_fraction * w;
            samples_seen += chunk.len();
        }
    }
    if !params.actor.is_finite() || !params.critic.is_finite() {
        return Err(PpoError::NonFiniteParameters);
    }
    params.update_count += 1;
    let denom = samples_seen as f64;
    Ok(UpdateDiagnostics {
        actor_loss: sum_actor / denom,
        critic_loss: sum_critic / denom,
        entropy: sum_entropy / denom,
        clip_fraction: sum_clip / denom,
    })
}

/// Shifts to mean zero and scales by the (population) standard deviation
/// plus 1e-8, so constant-advantage minibatches map to all zeros instead of
/// dividing by zero.
fn normalize_in_place(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for v in values {
        *v = (*v - mean) * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::net::softmax;
    use rand::SeedableRng;

    fn tiny_actor(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(&[3, 4, 4], 0.5, &mut rng)
    }

    /// Builds a single-sample batch whose importance ratio is exactly
    /// `ratio` by back-dating the stored log-probability.
    fn batch_with_ratio<'a>(
        actor: &Mlp,
        obs: &'a [Vec<f64>],
        action: usize,
        ratio: f64,
        adv: &'a mut [f64; 1],
        lp_old: &'a mut [f64; 1],
        actions: &'a mut [usize; 1],
    ) -> ActorBatch<'a> {
        let log_probs = log_softmax(&actor.forward(&obs[0]));
        lp_old[0] = log_probs[action] - ratio.ln();
        actions[0] = action;
        ActorBatch {
            obs,
            actions: &actions[..],
            log_prob_old: &lp_old[..],
            advantages: &adv[..],
        }
    }

    #[test]
    fn positive_advantage_above_clip_pins_loss_at_the_clip_value() {
        let actor = tiny_actor(1);
        let obs = vec![vec![0.2, -0.4, 0.7]];
        let mut adv = [2.0];
        let mut lp = [0.0];
        let mut act = [0usize];
        let batch = batch_with_ratio(&actor, &obs, 1, 1.5, &mut adv, &mut lp, &mut act);
        let eval = actor_loss_and_grads(&actor, &batch, 0.2, 0.0);
        // min(1.5 * 2, 1.2 * 2) = 2.4; loss = -2.4; gradient fully clipped.
        assert!((eval.policy_loss - (-1.2 * 2.0)).abs() < 1e-12);
        assert_eq!(eval.clip_fraction, 1.0);
        assert!(eval.grads.w.iter().chain(eval.grads.b.iter()).all(|layer| layer
            .iter()
            .all(|g| *g == 0.0)));
    }

    #[test]
    fn negative_advantage_below_clip_pins_loss_at_the_clip_value() {
        let actor = tiny_actor(2);
        let obs = vec![vec![-0.1, 0.3, 0.9]];
        let mut adv = [-1.0];
        let mut lp = [0.0];
        let mut act = [0usize];
        let batch = batch_with_ratio(&actor, &obs, 2, 0.5, &mut adv, &mut lp, &mut act);
        let eval = actor_loss_and_grads(&actor, &batch, 0.2, 0.0);
        // min(0.5 * -1, 0.8 * -1) = -0.8; loss = +0.8; gradient clipped away.
        assert!((eval.policy_loss - 0.8).abs() < 1e-12);
        assert_eq!(eval.clip_fraction, 1.0);
        assert!(eval.grads.w.iter().chain(eval.grads.b.iter()).all(|layer| layer
            .iter()
            .all(|g| *g == 0.0)));
    }

    #[test]
    fn unit_ratio_is_unaffected_by_the_clip_range() {
        // At ratio exactly 1 the clip must be inert: identical loss and
        // gradients for wildly different clip widths, and gradients nonzero.
        let actor = tiny_actor(3);
        let obs = vec![vec![0.5, 0.5, -0.5]];
        let mut adv = [1.7];
        let mut lp = [0.0];
        let mut act = [0usize];
        let batch = batch_with_ratio(&actor, &obs, 0, 1.0, &mut adv, &mut lp, &mut act);
        let narrow = actor_loss_and_grads(&actor, &batch, 0.05, 0.0);
        let batch = batch_with_ratio(&actor, &obs, 0, 1.0, &mut adv, &mut lp, &mut act);
        let wide = actor_loss_and_grads(&actor, &batch, 0.9, 0.0);
        assert_eq!(narrow.policy_loss, wide.policy_loss);
        assert_eq!(narrow.grads.w, wide.grads.w);
        assert_eq!(narrow.grads.b, wide.grads.b);
        assert_eq!(narrow.clip_fraction, 0.0);
        let grad_norm: f64 = narrow
            .grads
            .w
            .iter()
            .flatten()
            .chain(narrow.grads.b.iter().flatten())
            .map(|g| g * g)
            .sum();
        assert!(grad_norm > 0.0, "tied min must keep the unclipped gradient");
        assert!((narrow.policy_loss - (-1.7)).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_direct_computation_on_the_head_distribution() {
        let actor = tiny_actor(4);
        let obs = vec![vec![0.1, 0.2, 0.3]];
        let mut adv = [0.0];
        let mut lp = [0.0];
        let mut act = [0usize];
        let batch = batch_with_ratio(&actor, &obs, 0, 1.0, &mut adv, &mut lp, &mut act);
        let eval = actor_loss_and_grads(&actor, &batch, 0.2, 0.01);
        let p = softmax(&actor.forward(&obs[0]));
        let want: f64 = p.iter().map(|pi| -pi * pi.ln()).sum();
        assert!((eval.entropy - want).abs() < 1e-12);
        assert!((eval.total_loss - (eval.policy_loss - 0.01 * eval.entropy)).abs() < 1e-15);
    }

    #[test]
    fn critic_loss_is_scaled_mean_squared_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let critic = Mlp::new(&[3, 4, 1], 1.0, &mut rng);
        let obs = vec![vec![0.1, -0.2, 0.4], vec![0.9, 0.0, -0.3]];
        let targets = vec![1.0, -2.0];
        let (loss, _) = critic_loss_and_grads(
            &critic,
            &CriticBatch {
                obs: &obs,
                targets: &targets,
            },
            0.5,
        );
        let v0 = critic.forward(&obs[0])[0];
        let v1 = critic.forward(&obs[1])[0];
        let want = 0.5 * ((v0 - 1.0).powi(2) + (v1 + 2.0).powi(2)) / 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn advantage_normalization_centers_and_scales() {
        let mut vals = vec![1.0, 2.0, 3.0, 4.0];
        normalize_in_place(&mut vals);
        let mean: f64 = vals.iter().sum::<f64>() / 4.0;
        let var: f64 = vals.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
        let mut constant = vec![5.0; 3];
        normalize_in_place(&mut constant);
        assert!(constant.iter().all(|v| *v == 0.0));
    }
}
