//! Group Relative Policy Optimization with binary verifiable rewards.
//!
//! Per prompt, a group of G trajectories is sampled from the old policy
//! snapshot; rewards are normalized within the group into advantages
//! (`(r - mean) / std`, shared by every token of a trajectory); the
//! objective is the per-token clipped importance-ratio surrogate, length
//! normalized per trajectory, minus `beta` times an exact per-token KL to a
//! frozen reference policy. There is no critic, no entropy bonus, and no
//! format shaping: the reward is answer correctness, 0 or 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grader;
use crate::hash::derive_seed;
use crate::policy::{
    featurize, sample, FeatureSpec, GradBuffer, PolicyParams, PromptContext, SampleConfig,
    StateTracker, Trajectory, Vocabulary,
};
use crate::taskgen::TaskRecord;

/// GRPO hyperparameters. Reference-scale values (rollout batch 512, global
/// batch 128, learning rate 1e-6) are scaled down for the toy policy while
/// keeping the 4:1 rollout-to-update ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Trajectories per prompt (G).
    pub group_size: usize,
    /// Clipping half-width for the importance ratio.
    pub clip_eps: f64,
    /// KL penalty coefficient.
    pub kl_beta: f64,
    /// Prompts rolled out per optimization step.
    pub rollout_batch: usize,
    /// Prompts per mini-batch parameter update.
    pub global_batch: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay applied at each update.
    pub weight_decay: f64,
    pub rollout_temperature: f64,
    /// Global gradient-norm clip.
    pub max_grad_norm: f64,
    /// Rollout / response length cap.
    pub max_new_tokens: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            rollout_batch: 64,
            global_batch: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            rollout_temperature: 1.0,
            max_grad_norm: 1.0,
            max_new_tokens: 64,
            steps: 60,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group size must be at least 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip epsilon must lie in (0, 1)".into()));
        }
        if self.kl_beta < 0.0 || !self.kl_beta.is_finite() {
            return Err(Error::Config("kl beta must be finite and >= 0".into()));
        }
        if self.rollout_batch == 0
            || self.global_batch == 0
            || self.rollout_batch % self.global_batch != 0
        {
            return Err(Error::Config(
                "rollout batch must be a positive multiple of the global batch".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !(self.rollout_temperature > 0.0) {
            return Err(Error::Config("rollout temperature must be positive".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("max grad norm must be positive".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Group-normalized advantages: `(r - mean) / std` with the population
/// standard deviation; an all-equal group yields exact zeros.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Config("advantage groups need at least 2 rewards".into()));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    if var == 0.0 {
        return Ok(vec![0.0; g]);
    }
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// One token's contribution to the clipped surrogate:
/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)` with
/// `ratio = exp(logp_new - logp_old)`.
pub fn clipped_token_term(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> f64 {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    unclipped.min(clipped)
}

/// Exact KL(p_new || p_ref) at one state, from full log-probability
/// vectors. Each term of the Bregman form
/// `p ln(p/q) + q - p` is non-negative, so rounding can never push the
/// total below zero; the `q - p` corrections sum to zero exactly in the
/// mathematical expression.
fn state_kl(logp_new: &[f64], logp_ref: &[f64]) -> f64 {
    let mut total = 0.0;
    for (lp, lq) in logp_new.iter().zip(logp_ref) {
        let p = lp.exp();
        let q = lq.exp();
        total += (p * (lp - lq) + q - p).max(0.0);
    }
    total
}

/// Per-token-averaged exact KL between two policies over one trajectory's
/// visited states (feature sets of each decoding position).
pub fn kl_penalty(
    params_new: &PolicyParams,
    params_ref: &PolicyParams,
    states: &[Vec<u32>],
) -> Result<f64> {
    if params_new.vocab_hash() != params_ref.vocab_hash()
        || params_new.feature_hash() != params_ref.feature_hash()
    {
        return Err(Error::HashMismatch {
            expected: params_new.vocab_hash(),
            found: params_ref.vocab_hash(),
        });
    }
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for active in states {
        let lp_new = params_new.state_logprobs(active)?;
        let lp_ref = params_ref.state_logprobs(active)?;
        total += state_kl(&lp_new, &lp_ref);
    }
    Ok(total / states.len() as f64)
}

/// G trajectories for one prompt with rewards, group-normalized advantages,
/// cached per-state feature sets, and the reference policy's full
/// per-state log-probabilities.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `states[i][t]` = active features before token t of trajectory i.
    pub states: Vec<Vec<Vec<u32>>>,
    /// `ref_logprobs[i][t]` = full V-vector of reference log-probs.
    pub ref_logprobs: Vec<Vec<Vec<f64>>>,
    vocab_hash: u64,
    feature_hash: u64,
}

impl RolloutGroup {
    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }
}

/// Assemble a rollout group from sampled trajectories and their rewards,
/// computing advantages, state features and reference log-probabilities.
pub fn build_rollout_group(
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    prompt: &str,
    trajectories: Vec<Trajectory>,
    rewards: Vec<f64>,
) -> Result<RolloutGroup> {
    params_old.check_compat(vocab, spec)?;
    params_ref.check_compat(vocab, spec)?;
    if trajectories.len() != rewards.len() {
        return Err(Error::Config("one reward per trajectory required".into()));
    }
    if trajectories.iter().any(|t| t.prompt != prompt) {
        return Err(Error::Config(
            "every trajectory in a group must share the group prompt".into(),
        ));
    }
    let advantages = compute_advantages(&rewards)?;
    let ctx = PromptContext::new(prompt);
    let mut states = Vec::with_capacity(trajectories.len());
    let mut ref_logprobs = Vec::with_capacity(trajectories.len());
    for traj in &trajectories {
        let mut tracker = StateTracker::new(spec);
        let mut traj_states = Vec::with_capacity(traj.len());
        let mut traj_ref = Vec::with_capacity(traj.len());
        for &tok in &traj.tokens {
            let active = featurize(spec, &ctx, &tracker);
            traj_ref.push(params_ref.state_logprobs(&active)?);
            traj_states.push(active);
            tracker.advance(vocab, tok);
        }
        states.push(traj_states);
        ref_logprobs.push(traj_ref);
    }
    Ok(RolloutGroup {
        prompt: prompt.to_string(),
        trajectories,
        rewards,
        advantages,
        states,
        ref_logprobs,
        vocab_hash: vocab.hash(),
        feature_hash: spec.hash(),
    })
}

/// Sample a fresh group for one task under the old policy snapshot, scoring
/// each trajectory with the binary answer reward.
pub fn sample_rollout_group(
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    task: &TaskRecord,
    config: &GrpoConfig,
    group_seed: u64,
) -> Result<RolloutGroup> {
    let mut trajectories = Vec::with_capacity(config.group_size);
    let mut rewards = Vec::with_capacity(config.group_size);
    for j in 0..config.group_size {
        let cfg = SampleConfig {
            temperature: config.rollout_temperature,
            top_k: vocab.len(),
            top_p: 1.0,
            max_len: config.max_new_tokens,
            seed: derive_seed(group_seed, &format!("traj-{j}")),
        };
        let traj = sample(params_old, vocab, spec, &task.prompt, &cfg)?;
        let text = traj.render(vocab);
        rewards.push(grader::reward(&text, &task.ground_truth) as f64);
        trajectories.push(traj);
    }
    build_rollout_group(params_old, params_ref, vocab, spec, &task.prompt, trajectories, rewards)
}

/// Diagnostics computed on the same batch as the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoDiagnostics {
    pub mean_reward: f64,
    /// Share of tokens where the clipped branch is strictly the minimum.
    pub clip_fraction: f64,
    /// Per-token-averaged KL to the reference, aggregated like the
    /// objective's KL term.
    pub mean_kl: f64,
}

fn objective_impl(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
    mut grad: Option<&mut GradBuffer>,
) -> Result<(f64, GrpoDiagnostics)> {
    if groups.is_empty() {
        return Err(Error::Config("grpo objective needs at least one group".into()));
    }
    for g in groups {
        if g.vocab_hash != params.vocab_hash() || g.feature_hash != params.feature_hash() {
            return Err(Error::HashMismatch {
                expected: params.vocab_hash(),
                found: g.vocab_hash,
            });
        }
    }
    let n_groups = groups.len() as f64;
    let mut surrogate_total = 0.0;
    let mut kl_total = 0.0;
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    let mut clipped_tokens = 0usize;
    let mut token_count = 0usize;
    for group in groups {
        let g = group.trajectories.len() as f64;
        let mut group_surrogate = 0.0;
        let mut group_kl = 0.0;
        for (i, traj) in group.trajectories.iter().enumerate() {
            let advantage = group.advantages[i];
            let len = traj.len() as f64;
            let per_token = 1.0 / len;
            let mut traj_surrogate = 0.0;
            let mut traj_kl = 0.0;
            for (t, &tok) in traj.tokens.iter().enumerate() {
                let active = &group.states[i][t];
                let lp_new_vec = params.state_logprobs(active)?;
                let lp_new = lp_new_vec[tok as usize];
                let lp_old = traj.logprobs[t];
                let lp_ref_vec = &group.ref_logprobs[i][t];

                let ratio = (lp_new - lp_old).exp();
                let unclipped = ratio * advantage;
                let clipped = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps) * advantage;
                traj_surrogate += unclipped.min(clipped);
                if clipped < unclipped {
                    clipped_tokens += 1;
                }
                token_count += 1;

                traj_kl += state_kl(&lp_new_vec, lp_ref_vec);

                if let Some(buf) = grad.as_deref_mut() {
                    // Surrogate gradient flows only through the unclipped
                    // branch; where the clipped branch is strictly smaller
                    // the token contributes nothing.
                    if unclipped <= clipped {
                        let scale = advantage * ratio * per_token / (g * n_groups);
                        let probs: Vec<f64> = lp_new_vec.iter().map(|lp| lp.exp()).collect();
                        buf.add_state(active, &probs, tok, scale);
                    }
                    if config.kl_beta != 0.0 {
                        // d KL / d logits = p .* (delta - E_p[delta]).
                        let probs: Vec<f64> = lp_new_vec.iter().map(|lp| lp.exp()).collect();
                        let delta: Vec<f64> = lp_new_vec
                            .iter()
                            .zip(lp_ref_vec)
                            .map(|(a, b)| a - b)
                            .collect();
                        let expectation: f64 =
                            probs.iter().zip(&delta).map(|(p, d)| p * d).sum();
                        let vector: Vec<f64> = probs
                            .iter()
                            .zip(&delta)
                            .map(|(p, d)| p * (d - expectation))
                            .collect();
                        let scale = -config.kl_beta * per_token / (g * n_groups);
                        buf.add_state_vector(active, &vector, scale);
                    }
                }
            }
            group_surrogate += traj_surrogate * per_token;
            group_kl += traj_kl * per_token;
        }
        surrogate_total += group_surrogate / g;
        kl_total += group_kl / g;
        reward_sum += group.rewards.iter().sum::<f64>();
        reward_count += group.rewards.len();
    }
    let surrogate = surrogate_total / n_groups;
    let mean_kl = kl_total / n_groups;
    let objective = surrogate - config.kl_beta * mean_kl;
    Ok((
        objective,
        GrpoDiagnostics {
            mean_reward: reward_sum / reward_count.max(1) as f64,
            clip_fraction: clipped_tokens as f64 / token_count.max(1) as f64,
            mean_kl,
        },
    ))
}

/// The GRPO objective over a batch of groups, with diagnostics computed on
/// the same batch. Importance ratios compare `params` against the log-probs
/// recorded at rollout time (the old policy snapshot).
pub fn grpo_objective(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(f64, GrpoDiagnostics)> {
    objective_impl(params, groups, config, None)
}

/// Objective plus its analytic gradient with respect to `params`.
pub fn grpo_objective_grad(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(f64, Vec<f64>, GrpoDiagnostics)> {
    let (f, v) = params.dims();
    let mut grad = GradBuffer::zeros(f, v);
    let (value, diag) = objective_impl(params, groups, config, Some(&mut grad))?;
    Ok((value, grad.into_inner(), diag))
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrpoStepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_resp_len: f64,
    /// Greedy accuracy on the held-out set after this step's updates.
    pub test_score: f64,
    pub kl: f64,
    pub clip_frac: f64,
    /// Pre-clip global gradient norm, averaged over the step's updates.
    pub grad_norm: f64,
    /// Largest |advantage mean| seen in any group this step.
    pub max_adv_mean_abs: f64,
    /// Largest |advantage std - 1| among non-degenerate groups this step.
    pub max_adv_std_err: f64,
}

fn greedy_eval(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    tasks: &[TaskRecord],
    max_new_tokens: usize,
) -> Result<f64> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let cfg = SampleConfig {
        temperature: 0.01,
        top_k: 1,
        top_p: 0.001,
        max_len: max_new_tokens,
        seed: 0,
    };
    let hits: Result<Vec<u8>> = tasks
        .par_iter()
        .map(|task| {
            let traj = sample(params, vocab, spec, &task.prompt, &cfg)?;
            Ok(grader::reward(&traj.render(vocab), &task.ground_truth))
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().map(|&h| h as usize).sum::<usize>() as f64 / tasks.len() as f64)
}

/// Run GRPO from `start`. The reference policy is frozen at `start` (the
/// SFT model of the iteration); each step snapshots the current parameters
/// as the old policy, rolls out `rollout_batch` groups at the rollout
/// temperature, and performs `rollout_batch / global_batch` clipped ascent
/// updates with decoupled weight decay and gradient-norm clipping.
pub fn grpo_train(
    start: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    tasks: &[TaskRecord],
    heldout: &[TaskRecord],
    config: &GrpoConfig,
) -> Result<(PolicyParams, Vec<GrpoStepStats>)> {
    config.validate()?;
    start.check_compat(vocab, spec)?;
    if tasks.is_empty() {
        return Err(Error::Config("grpo task pool is empty".into()));
    }
    let params_ref = start.clone();
    let mut params = start.clone();
    let mut stats = Vec::with_capacity(config.steps);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut cycle = 0usize;

    for step in 0..config.steps {
        // Next rollout batch of prompts, cycling through seeded shuffles of
        // the pool.
        let mut batch_tasks: Vec<&TaskRecord> = Vec::with_capacity(config.rollout_batch);
        while batch_tasks.len() < config.rollout_batch {
            if cursor >= order.len() {
                order = (0..tasks.len()).collect();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("order-{cycle}")));
                order.shuffle(&mut rng);
                cursor = 0;
                cycle += 1;
            }
            batch_tasks.push(&tasks[order[cursor]]);
            cursor += 1;
        }

        let params_old = params.clone();
        let groups: Result<Vec<RolloutGroup>> = batch_tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let group_seed = derive_seed(config.seed, &format!("step-{step}-group-{i}"));
                sample_rollout_group(
                    &params_old,
                    &params_ref,
                    vocab,
                    spec,
                    task,
                    config,
                    group_seed,
                )
            })
            .collect();
        let groups = groups?;

        let mut max_adv_mean_abs = 0.0f64;
        let mut max_adv_std_err = 0.0f64;
        let mut reward_sum = 0.0;
        let mut len_sum = 0usize;
        let mut traj_count = 0usize;
        for g in &groups {
            let mean = g.advantages.iter().sum::<f64>() / g.advantages.len() as f64;
            max_adv_mean_abs = max_adv_mean_abs.max(mean.abs());
            let degenerate = g.advantages.iter().all(|a| *a == 0.0);
            if !degenerate {
                let var = g
                    .advantages
                    .iter()
                    .map(|a| (a - mean) * (a - mean))
                    .sum::<f64>()
                    / g.advantages.len() as f64;
                max_adv_std_err = max_adv_std_err.max((var.sqrt() - 1.0).abs());
            }
            reward_sum += g.rewards.iter().sum::<f64>();
            len_sum += g.trajectories.iter().map(|t| t.len()).sum::<usize>();
            traj_count += g.trajectories.len();
        }

        let updates = config.rollout_batch / config.global_batch;
        let mut kl_acc = 0.0;
        let mut clip_acc = 0.0;
        let mut grad_norm_acc = 0.0;
        for chunk in groups.chunks(config.global_batch) {
            let (objective, grad, diag) = grpo_objective_grad(&params, chunk, config)?;
            if !objective.is_finite() {
                return Err(Error::NonFinite {
                    what: "grpo objective",
                    step,
                });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    what: "grpo gradient",
                    step,
                });
            }
            let scale = if norm > config.max_grad_norm {
                config.max_grad_norm / norm
            } else {
                1.0
            };
            let lr = config.learning_rate;
            let decay = 1.0 - lr * config.weight_decay;
            for (t, g) in params.theta_mut().iter_mut().zip(&grad) {
                *t = *t * decay + lr * scale * g;
            }
            kl_acc += diag.mean_kl;
            clip_acc += diag.clip_fraction;
            grad_norm_acc += norm;
        }

        let test_score = greedy_eval(&params, vocab, spec, heldout, config.max_new_tokens)?;
        stats.push(GrpoStepStats {
            step,
            mean_reward: reward_sum / traj_count.max(1) as f64,
            mean_resp_len: len_sum as f64 / traj_count.max(1) as f64,
            test_score,
            kl: kl_acc / updates as f64,
            clip_frac: clip_acc / updates as f64,
            grad_norm: grad_norm_acc / updates as f64,
            max_adv_mean_abs,
            max_adv_std_err,
        });
    }
    Ok((params, stats))
}
