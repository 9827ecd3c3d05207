//! Multi-stage decoding: temperature, then top-nσ on the logits, then
//! top-p on the renormalized survivors, then a categorical draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tabular::softmax;
use super::{PolicyError, TabularPolicy, TokenId};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// `f64::INFINITY` disables the filter.
    pub nsigma: f64,
    pub max_len: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            top_p: 1.0,
            nsigma: 1.5,
            max_len: 8,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature > 0.0) {
            return Err(PolicyError::Config("temperature must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PolicyError::Config("top_p must lie in (0, 1]".into()));
        }
        if !(self.nsigma >= 0.0) {
            return Err(PolicyError::Config("nsigma must be >= 0".into()));
        }
        if self.max_len == 0 {
            return Err(PolicyError::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Keeps tokens whose logit is within `nsigma` population standard
/// deviations of the maximum.
pub fn top_nsigma_filter(logits: &[f64], nsigma: f64) -> Vec<bool> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if nsigma.is_infinite() {
        return vec![true; logits.len()];
    }
    let n = logits.len() as f64;
    let mean = logits.iter().sum::<f64>() / n;
    let std = (logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = max - nsigma * std;
    logits.iter().map(|&l| l >= threshold || l == max).collect()
}

/// Smallest probability-sorted prefix whose mass reaches `p`; ties in
/// probability are ordered by token index.
pub fn top_p_filter(probs: &[f64], p: f64) -> Vec<bool> {
    if p >= 1.0 {
        return vec![true; probs.len()];
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    let mut mass = 0.0;
    for i in order {
        keep[i] = true;
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    keep
}

/// The distribution actually sampled from after all filters.
pub fn filtered_distribution(logits: &[f64], cfg: &GenerationConfig) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
    let nsig = top_nsigma_filter(&scaled, cfg.nsigma);
    let masked: Vec<f64> = scaled
        .iter()
        .zip(&nsig)
        .map(|(&l, &k)| if k { l } else { f64::NEG_INFINITY })
        .collect();
    let probs = softmax(&masked);
    let nucleus = top_p_filter(&probs, cfg.top_p);
    let kept: Vec<f64> = probs
        .iter()
        .zip(&nucleus)
        .map(|(&p, &k)| if k { p } else { 0.0 })
        .collect();
    let z: f64 = kept.iter().sum();
    kept.into_iter().map(|p| p / z).collect()
}

/// Inverse-CDF draw; the last nonzero entry absorbs rounding slack.
pub fn categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Anything that can extend a token context one step at a time.
pub trait TokenGenerator {
    fn eos(&self) -> TokenId;
    fn next_token(&self, context: &[TokenId], rng: &mut ChaCha8Rng) -> TokenId;
}

/// Binds a tabular policy to one prompt and a decoding configuration.
#[derive(Debug, Clone, Copy)]
pub struct PolicyDecoder<'a> {
    pub policy: &'a TabularPolicy,
    pub prompt: usize,
    pub cfg: &'a GenerationConfig,
    pub eos: TokenId,
}

impl PolicyDecoder<'_> {
    pub fn state_at(&self, context: &[TokenId]) -> usize {
        self.policy
            .state(self.prompt, context.len(), context.last().copied())
            .expect("decoder prompt and tokens are in range")
    }
}

impl TokenGenerator for PolicyDecoder<'_> {
    fn eos(&self) -> TokenId {
        self.eos
    }

    fn next_token(&self, context: &[TokenId], rng: &mut ChaCha8Rng) -> TokenId {
        let logits = self
            .policy
            .logits(self.state_at(context))
            .expect("state in range");
        categorical(&filtered_distribution(logits, self.cfg), rng) as TokenId
    }
}

/// A sampled response with the policy's own (unfiltered, temperature-1)
/// log-probabilities and the state visited at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub states: Vec<usize>,
    pub logprobs: Vec<f64>,
    /// Tokens inserted by a decoding wrapper rather than sampled; they are
    /// excluded from rewards and from the training objective.
    pub injected: Vec<bool>,
    /// Hit `max_len` without emitting end-of-sequence.
    pub truncated: bool,
}

impl Rollout {
    /// Tokens that were actually sampled from the policy.
    pub fn sampled_tokens(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .zip(&self.injected)
            .filter(|(_, &inj)| !inj)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Recomputes states and log-probabilities of `tokens` under `policy`.
    pub fn score(
        policy: &TabularPolicy,
        prompt: usize,
        tokens: Vec<TokenId>,
        truncated: bool,
    ) -> Result<Self, PolicyError> {
        let injected = vec![false; tokens.len()];
        Self::score_with_injected(policy, prompt, tokens, injected, truncated)
    }

    pub fn score_with_injected(
        policy: &TabularPolicy,
        prompt: usize,
        tokens: Vec<TokenId>,
        injected: Vec<bool>,
        truncated: bool,
    ) -> Result<Self, PolicyError> {
        if injected.len() != tokens.len() {
            return Err(PolicyError::Shape("injected mask length differs from tokens".into()));
        }
        let mut states = Vec::with_capacity(tokens.len());
        let mut logprobs = Vec::with_capacity(tokens.len());
        for (i, &t) in tokens.iter().enumerate() {
            let prev = if i == 0 { None } else { Some(tokens[i - 1]) };
            let s = policy.state(prompt, i, prev)?;
            logprobs.push(policy.token_logprob(s, t)?);
            states.push(s);
        }
        Ok(Self {
            tokens,
            states,
            logprobs,
            injected,
            truncated,
        })
    }
}

pub fn sample_response(
    policy: &TabularPolicy,
    prompt: usize,
    cfg: &GenerationConfig,
    eos: TokenId,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, PolicyError> {
    cfg.validate()?;
    policy.state(prompt, 0, None)?;
    let decoder = PolicyDecoder {
        policy,
        prompt,
        cfg,
        eos,
    };
    let mut tokens = Vec::with_capacity(cfg.max_len);
    let mut truncated = true;
    while tokens.len() < cfg.max_len {
        let t = decoder.next_token(&tokens, rng);
        tokens.push(t);
        if t == eos {
            truncated = false;
            break;
        }
    }
    Rollout::score(policy, prompt, tokens, truncated)
}
