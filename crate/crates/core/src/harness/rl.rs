use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{benchmark, evaluate, EvalReport, ExperimentConfig, PolicySolver, Result};
use crate::curriculum::{bucket_by_complexity, effective_ratio, mix_curriculum, score_all, CurriculumBuckets, ReferenceVerifier, SelectionConfig};
use crate::data::DataSample;
use crate::grpo::{rl_step, RlEnv, RlPrompt};
use crate::mars::{ExactMatchJudge, Mars, MarsConfig};
use crate::policy::{
    sample_response, toy_prompt_id, PolicyDecoder, PolicyError, Rollout, TabularPolicy, Vocab, NUM_TOY_PROBLEMS,
};
use crate::repetition::self_repair_generate;
use crate::rng::{derive_seed, ChaCha8Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlStepRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub masked_fraction: f64,
    pub mean_kl: f64,
    pub mean_abs_adv: f64,
    pub mean_response_len: f64,
    pub truncated_fraction: f64,
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
    pub flagged: usize,
    pub injected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlReport {
    pub steps: Vec<RlStepRecord>,
    /// `(step, report)`; step counts completed updates.
    pub evals: Vec<(u64, EvalReport)>,
    pub policy: TabularPolicy,
}

impl RlReport {
    /// Mean training reward over the first and last `window` steps.
    pub fn reward_gain(&self, window: usize) -> Option<(f64, f64)> {
        if self.steps.len() < window || window == 0 {
            return None;
        }
        let mean = |s: &[RlStepRecord]| s.iter().map(|r| r.mean_reward).sum::<f64>() / s.len() as f64;
        Some((mean(&self.steps[..window]), mean(&self.steps[self.steps.len() - window..])))
    }
}

fn rebucket(cfg: &ExperimentConfig, pool: &[DataSample], policy: &TabularPolicy, step: usize) -> Result<CurriculumBuckets> {
    let vocab = Vocab::arithmetic();
    let solver = PolicySolver {
        policy,
        vocab: &vocab,
        gen: cfg.rl.generation.clone(),
    };
    let sel = SelectionConfig {
        k: cfg.rl.scoring_k,
        temperature: cfg.rl.generation.temperature,
        seed: derive_seed(cfg.seed, "curriculum-score", step as u64),
        ..SelectionConfig::default()
    };
    let verifier = ReferenceVerifier {
        judge: Some(ExactMatchJudge),
    };
    let scores: Vec<f64> = score_all(pool, &solver, &sel, &verifier)?
        .into_iter()
        .map(|s| s.value)
        .collect();
    Ok(bucket_by_complexity(pool, &scores, cfg.rl.bucket_low, cfg.rl.bucket_high)?)
}

/// GRPO training on the toy pool from `init` (the uniform policy when
/// absent), with curriculum mixing re-scored every `rebucket_every` steps.
pub fn run_rl(cfg: &ExperimentConfig, init: Option<TabularPolicy>) -> Result<RlReport> {
    cfg.validate()?;
    let vocab = Vocab::arithmetic();
    let pool = cfg.load_pool(cfg.rl.pool_size)?;
    let bench = benchmark(cfg, &pool);
    let mut policy = match init {
        Some(p) => p,
        None => TabularPolicy::uniform(NUM_TOY_PROBLEMS, cfg.policy.horizon, vocab.len())?,
    };
    let reference = policy.clone();
    let mars = Mars::new(MarsConfig::default()).with_judge(ExactMatchJudge);
    let gen = cfg.rl.generation.clone();
    let flagged = AtomicUsize::new(0);
    let injected = AtomicUsize::new(0);
    let source = |p: &TabularPolicy, prompt: usize, rng: &mut ChaCha8Rng| -> std::result::Result<Rollout, PolicyError> {
        if !cfg.rl.guarded {
            return sample_response(p, prompt, &gen, vocab.eos(), rng);
        }
        let decoder = PolicyDecoder {
            policy: p,
            prompt,
            cfg: &gen,
            eos: vocab.eos(),
        };
        let out = self_repair_generate(&decoder, gen.max_len, &cfg.detector, rng);
        flagged.fetch_add(out.flagged(), Ordering::Relaxed);
        injected.fetch_add(out.injections(), Ordering::Relaxed);
        Rollout::score_with_injected(p, prompt, out.tokens, out.injected, out.truncated)
    };
    let env = RlEnv {
        mars: &mars,
        vocab: &vocab,
        source: &source,
        mode: cfg.rl.mode,
        group_size: cfg.rl.group_size,
    };
    let eval_seed = derive_seed(cfg.seed, "rl-eval", 0);
    let mut steps = Vec::with_capacity(cfg.rl.steps);
    let mut evals = Vec::new();
    let mut buckets = None;
    for step in 0..cfg.rl.steps {
        if buckets.is_none() || (cfg.rl.rebucket_every > 0 && step % cfg.rl.rebucket_every == 0) {
            buckets = Some(rebucket(cfg, &pool, &policy, step)?);
        }
        let b = buckets.as_ref().expect("scored at step 0");
        let ratio = effective_ratio(b, cfg.rl.ratio);
        let batch = mix_curriculum(b, cfg.rl.prompts_per_step, ratio, derive_seed(cfg.seed, "curriculum", step as u64))?;
        let prompts = batch
            .samples
            .into_iter()
            .map(|sample| Ok(RlPrompt {
                prompt_id: toy_prompt_id(&sample)?,
                sample,
            }))
            .collect::<Result<Vec<_>>>()?;
        flagged.store(0, Ordering::Relaxed);
        injected.store(0, Ordering::Relaxed);
        let m = rl_step(&mut policy, &reference, &prompts, &env, &cfg.grpo, derive_seed(cfg.seed, "rl", 0), step as u64)?;
        steps.push(RlStepRecord {
            step: m.step,
            mean_reward: m.mean_reward,
            masked_fraction: m.masked_fraction,
            mean_kl: m.mean_kl,
            mean_abs_adv: m.mean_abs_adv,
            mean_response_len: m.mean_response_len,
            truncated_fraction: m.truncated_fraction,
            easy: batch.counts[0],
            medium: batch.counts[1],
            hard: batch.counts[2],
            flagged: flagged.load(Ordering::Relaxed),
            injected: injected.load(Ordering::Relaxed),
        });
        if cfg.rl.eval_every > 0 && (step + 1) % cfg.rl.eval_every == 0 {
            let r = evaluate(&policy, &bench, &cfg.eval.generation, cfg.eval.min_effective, eval_seed)?;
            evals.push((step as u64 + 1, r));
        }
    }
    Ok(RlReport { steps, evals, policy })
}
