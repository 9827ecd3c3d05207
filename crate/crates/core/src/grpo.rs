//! Group Relative Policy Optimization on the tabular policy.
//!
//! For a group of `G` responses to one prompt the objective is
//!
//! ```text
//! J = 1/G * sum_i m_i / |y_i| * sum_t [ min(rho A_i, clip(rho, 1-eps_low, 1+eps_high) A_i)
//!                                       - beta * k3(theta, ref) ]
//! ```
//!
//! with `rho = exp(logp_theta - logp_old)`, group-normalized advantages
//! `A_i`, the nonnegative estimator `k3 = e^(ref-theta) - (ref-theta) - 1`,
//! and `m_i = 0` for responses whose advantage is exactly zero.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataSample;
use crate::mars::{ExpectedMode, Mars, MarsError};
use crate::policy::{PolicyError, Rollout, TabularPolicy, TokenId, Vocab};
use crate::rng::{derive_seed, substream, ChaCha8Rng};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("rollout group: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("grpo config: {0}")]
    Config(String),
    #[error("reward system: {0}")]
    Reward(#[from] MarsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub delta_adv: f64,
    pub learning_rate: f64,
    /// Groups per gradient step; 0 means the whole batch.
    pub minibatch: usize,
    pub updates_per_batch: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 1e-2,
            delta_adv: 1e-8,
            learning_rate: 0.1,
            minibatch: 1,
            updates_per_batch: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.eps_low > 0.0 && self.eps_high > 0.0) {
            return Err(GrpoError::Config("clip bounds must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(GrpoError::Config("beta must be >= 0".into()));
        }
        if !(self.delta_adv > 0.0) {
            return Err(GrpoError::Config("delta_adv must be > 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(GrpoError::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.updates_per_batch == 0 {
            return Err(GrpoError::Config("updates_per_batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// `G` responses to one prompt with their per-token log-probabilities under
/// the sampling, current and reference policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub responses: Vec<Vec<TokenId>>,
    pub states: Vec<Vec<usize>>,
    /// `false` for tokens that were inserted rather than sampled.
    pub trainable: Vec<Vec<bool>>,
    pub logp_old: Vec<Vec<f64>>,
    pub logp_theta: Vec<Vec<f64>>,
    pub logp_ref: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    /// Builds a group from rollouts sampled with `old`; the current policy
    /// starts equal to `old`.
    pub fn from_rollouts(
        prompt_id: usize,
        rollouts: &[Rollout],
        rewards: Vec<f64>,
        reference: &TabularPolicy,
    ) -> Result<Self, GrpoError> {
        let mut logp_ref = Vec::with_capacity(rollouts.len());
        for r in rollouts {
            logp_ref.push(
                r.states
                    .iter()
                    .zip(&r.tokens)
                    .map(|(&s, &t)| reference.token_logprob(s, t))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        let g = Self {
            prompt_id,
            responses: rollouts.iter().map(|r| r.tokens.clone()).collect(),
            states: rollouts.iter().map(|r| r.states.clone()).collect(),
            trainable: rollouts
                .iter()
                .map(|r| r.injected.iter().map(|i| !i).collect())
                .collect(),
            logp_old: rollouts.iter().map(|r| r.logprobs.clone()).collect(),
            logp_theta: rollouts.iter().map(|r| r.logprobs.clone()).collect(),
            logp_ref,
            rewards,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.responses.len();
        if g < 2 {
            return Err(GrpoError::Shape(format!("need at least 2 responses, got {g}")));
        }
        for (name, n) in [
            ("states", self.states.len()),
            ("trainable", self.trainable.len()),
            ("logp_old", self.logp_old.len()),
            ("logp_theta", self.logp_theta.len()),
            ("logp_ref", self.logp_ref.len()),
            ("rewards", self.rewards.len()),
        ] {
            if n != g {
                return Err(GrpoError::Shape(format!("{name} has {n} entries for {g} responses")));
            }
        }
        for i in 0..g {
            let n = self.responses[i].len();
            let arrays = [
                self.states[i].len(),
                self.trainable[i].len(),
                self.logp_old[i].len(),
                self.logp_theta[i].len(),
                self.logp_ref[i].len(),
            ];
            if arrays.iter().any(|&m| m != n) {
                return Err(GrpoError::Shape(format!("response {i}: per-token arrays differ in length")));
            }
        }
        let finite = |v: &Vec<Vec<f64>>| v.iter().flatten().all(|x| x.is_finite());
        if !(finite(&self.logp_old) && finite(&self.logp_theta) && finite(&self.logp_ref)) {
            return Err(GrpoError::NonFinite("log-probability"));
        }
        if !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(GrpoError::NonFinite("reward"));
        }
        Ok(())
    }

    /// Recomputes `logp_theta` under `policy`.
    pub fn refresh_theta(&mut self, policy: &TabularPolicy) -> Result<(), GrpoError> {
        for i in 0..self.responses.len() {
            for t in 0..self.responses[i].len() {
                self.logp_theta[i][t] = policy.token_logprob(self.states[i][t], self.responses[i][t])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `(r_i - mean) / (std + delta)` with population std. Bitwise-equal
/// rewards give exact zeros.
pub fn compute_advantages(rewards: &[f64], delta_adv: f64) -> Result<AdvantageVector, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Shape(format!("need at least 2 rewards, got {}", rewards.len())));
    }
    if !rewards.iter().all(|r| r.is_finite()) {
        return Err(GrpoError::NonFinite("reward"));
    }
    if rewards.iter().all(|r| r.to_bits() == rewards[0].to_bits()) {
        return Ok(AdvantageVector(vec![0.0; rewards.len()]));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AdvantageVector(
        rewards.iter().map(|r| (r - mean) / (std + delta_adv)).collect(),
    ))
}

pub fn kl_term(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

/// Zeroes the whole contribution of every response whose advantage is 0.
pub fn apply_zero_advantage_mask(per_sequence_terms: &[f64], adv: &AdvantageVector) -> Vec<f64> {
    per_sequence_terms
        .iter()
        .zip(&adv.0)
        .map(|(&t, &a)| if a == 0.0 { 0.0 } else { t })
        .collect()
}

/// Per-token value and derivative with respect to `logp_theta`.
pub fn token_term(lt: f64, lo: f64, lr: f64, adv: f64, cfg: &GrpoConfig) -> (f64, f64) {
    let rho = (lt - lo).exp();
    let clipped = rho.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let surrogate = (rho * adv).min(clipped * adv);
    let active = if adv > 0.0 {
        rho <= 1.0 + cfg.eps_high
    } else if adv < 0.0 {
        rho >= 1.0 - cfg.eps_low
    } else {
        false
    };
    let dsurr = if active { rho * adv } else { 0.0 };
    let value = surrogate - cfg.beta * kl_term(lt, lr);
    let dkl = 1.0 - (lr - lt).exp();
    (value, dsurr - cfg.beta * dkl)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    /// Masked per-response contributions (already divided by `G`).
    pub per_sequence: Vec<f64>,
    /// `d value / d logp_theta[i][t]`.
    pub coeffs: Vec<Vec<f64>>,
}

#[allow(clippy::needless_range_loop)]
pub fn grpo_objective(group: &RolloutGroup, adv: &AdvantageVector, cfg: &GrpoConfig) -> Result<Objective, GrpoError> {
    group.validate()?;
    if adv.0.len() != group.len() {
        return Err(GrpoError::Shape("advantage count differs from group size".into()));
    }
    let g = group.len() as f64;
    let mut raw = Vec::with_capacity(group.len());
    let mut coeffs = Vec::with_capacity(group.len());
    for i in 0..group.len() {
        let n = group.trainable[i].iter().filter(|&&t| t).count();
        let mut seq = 0.0;
        let mut c = vec![0.0; group.responses[i].len()];
        if n > 0 {
            let scale = 1.0 / (g * n as f64);
            for t in 0..group.responses[i].len() {
                if !group.trainable[i][t] {
                    continue;
                }
                let (v, d) = token_term(
                    group.logp_theta[i][t],
                    group.logp_old[i][t],
                    group.logp_ref[i][t],
                    adv.0[i],
                    cfg,
                );
                seq += scale * v;
                c[t] = scale * d;
            }
        }
        raw.push(seq);
        coeffs.push(c);
    }
    let per_sequence = apply_zero_advantage_mask(&raw, adv);
    for (c, &a) in coeffs.iter_mut().zip(&adv.0) {
        if a == 0.0 {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(Objective {
        value: per_sequence.iter().sum(),
        per_sequence,
        coeffs,
    })
}

/// Gradient restricted to the logit rows it touches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrad {
    /// Adds `scale * grad log p(token | state)`.
    pub fn add_token(&mut self, policy: &TabularPolicy, state: usize, token: TokenId, scale: f64) -> Result<(), GrpoError> {
        if scale == 0.0 {
            return Ok(());
        }
        let g = policy.grad_token_logprob(state, token)?;
        let row = self
            .rows
            .entry(state)
            .or_insert_with(|| vec![0.0; policy.vocab_size()]);
        for (r, v) in row.iter_mut().zip(&g.values) {
            *r += scale * v;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SparseGrad, scale: f64) {
        for (s, vals) in &other.rows {
            let row = self.rows.entry(*s).or_insert_with(|| vec![0.0; vals.len()]);
            for (r, v) in row.iter_mut().zip(vals) {
                *r += scale * v;
            }
        }
    }

    pub fn to_dense(&self, dim: usize, vocab_size: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (s, vals) in &self.rows {
            out[s * vocab_size..(s + 1) * vocab_size].copy_from_slice(vals);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|&v| v == 0.0)
    }

    /// `params += step * self`.
    pub fn apply(&self, policy: &mut TabularPolicy, step: f64) -> Result<(), GrpoError> {
        let v = policy.vocab_size();
        let params = policy.params_mut().as_mut_slice();
        for (s, vals) in &self.rows {
            for (p, g) in params[s * v..(s + 1) * v].iter_mut().zip(vals) {
                *p += step * g;
                if !p.is_finite() {
                    return Err(GrpoError::NonFinite("parameter after update"));
                }
            }
        }
        Ok(())
    }
}

/// Chains the objective's token coefficients through the policy.
pub fn objective_gradient(policy: &TabularPolicy, group: &RolloutGroup, obj: &Objective) -> Result<SparseGrad, GrpoError> {
    let mut grad = SparseGrad::default();
    for i in 0..group.len() {
        for t in 0..group.responses[i].len() {
            grad.add_token(policy, group.states[i][t], group.responses[i][t], obj.coeffs[i][t])?;
        }
    }
    Ok(grad)
}

/// Objective value and gradient at the current policy.
pub fn objective_and_gradient(
    policy: &TabularPolicy,
    group: &mut RolloutGroup,
    cfg: &GrpoConfig,
) -> Result<(Objective, SparseGrad), GrpoError> {
    group.refresh_theta(policy)?;
    let adv = compute_advantages(&group.rewards, cfg.delta_adv)?;
    let obj = grpo_objective(group, &adv, cfg)?;
    let grad = objective_gradient(policy, group, &obj)?;
    Ok((obj, grad))
}

/// Produces one rollout for a prompt id from the frozen sampling policy.
pub trait RolloutSource: Sync {
    fn rollout(&self, policy: &TabularPolicy, prompt_id: usize, rng: &mut ChaCha8Rng) -> Result<Rollout, PolicyError>;
}

impl<F> RolloutSource for F
where
    F: Fn(&TabularPolicy, usize, &mut ChaCha8Rng) -> Result<Rollout, PolicyError> + Sync,
{
    fn rollout(&self, policy: &TabularPolicy, prompt_id: usize, rng: &mut ChaCha8Rng) -> Result<Rollout, PolicyError> {
        self(policy, prompt_id, rng)
    }
}

/// Everything `rl_step` needs besides the policies.
pub struct RlEnv<'a> {
    pub mars: &'a Mars,
    pub vocab: &'a Vocab,
    pub source: &'a dyn RolloutSource,
    pub mode: ExpectedMode,
    pub group_size: usize,
}

/// One training prompt and its policy slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RlPrompt {
    pub sample: DataSample,
    pub prompt_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub masked_fraction: f64,
    pub mean_kl: f64,
    pub mean_abs_adv: f64,
    pub mean_response_len: f64,
    pub truncated_fraction: f64,
}

/// One GRPO step: sample `G` responses per prompt from a frozen copy of
/// `policy`, score them, and take up to `updates_per_batch` passes of
/// gradient ascent over minibatches of groups. On any error the policy is
/// left unchanged.
pub fn rl_step(
    policy: &mut TabularPolicy,
    reference: &TabularPolicy,
    prompts: &[RlPrompt],
    env: &RlEnv<'_>,
    cfg: &GrpoConfig,
    seed: u64,
    step: u64,
) -> Result<StepMetrics, GrpoError> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(GrpoError::Config("rl_step needs at least one prompt".into()));
    }
    if env.group_size < 2 {
        return Err(GrpoError::Config("group size must be >= 2".into()));
    }
    let old = policy.clone();
    let step_seed = derive_seed(seed, "rollout", step);

    let collected: Vec<(RolloutGroup, usize)> = prompts
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let mut rng = substream(step_seed, "prompt", j as u64);
            let rollouts = (0..env.group_size)
                .map(|_| env.source.rollout(&old, p.prompt_id, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let texts: Vec<String> = rollouts
                .iter()
                .map(|r| env.vocab.render(&r.sampled_tokens()))
                .collect();
            let signals = env.mars.score_group(&p.sample, &texts, env.mode)?;
            let rewards = signals.iter().map(|s| s.total).collect();
            let truncated = rollouts.iter().filter(|r| r.truncated).count();
            Ok((RolloutGroup::from_rollouts(p.prompt_id, &rollouts, rewards, reference)?, truncated))
        })
        .collect::<Result<_, GrpoError>>()?;
    let (mut groups, truncs): (Vec<RolloutGroup>, Vec<usize>) = collected.into_iter().unzip();

    let mut responses = 0usize;
    let mut reward_sum = 0.0;
    let mut masked = 0usize;
    let mut abs_adv = 0.0;
    let mut kl_sum = 0.0;
    let mut kl_tokens = 0usize;
    let mut len_sum = 0usize;
    for g in &groups {
        let adv = compute_advantages(&g.rewards, cfg.delta_adv)?;
        for i in 0..g.len() {
            responses += 1;
            reward_sum += g.rewards[i];
            abs_adv += adv.0[i].abs();
            masked += usize::from(adv.0[i] == 0.0);
            len_sum += g.responses[i].len();
            for t in 0..g.responses[i].len() {
                if g.trainable[i][t] {
                    kl_sum += kl_term(g.logp_old[i][t], g.logp_ref[i][t]);
                    kl_tokens += 1;
                }
            }
        }
    }

    let mut updated = policy.clone();
    let mb = if cfg.minibatch == 0 { groups.len() } else { cfg.minibatch };
    for _ in 0..cfg.updates_per_batch {
        for chunk in groups.chunks_mut(mb) {
            let scale = 1.0 / chunk.len() as f64;
            let mut total = SparseGrad::default();
            for g in chunk.iter_mut() {
                let (_, grad) = objective_and_gradient(&updated, g, cfg)?;
                total.merge(&grad, scale);
            }
            total.apply(&mut updated, cfg.learning_rate)?;
        }
    }
    *policy = updated;

    Ok(StepMetrics {
        step,
        mean_reward: reward_sum / responses as f64,
        masked_fraction: masked as f64 / responses as f64,
        mean_kl: kl_sum / kl_tokens.max(1) as f64,
        mean_abs_adv: abs_adv / responses as f64,
        mean_response_len: len_sum as f64 / responses as f64,
        truncated_fraction: truncs.iter().sum::<usize>() as f64 / responses as f64,
    })
}
